from dataclasses import asdict, dataclass, replace
from itertools import product
import logging
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from scipy.special import entr

from .sgbt import SgbtModel, SgbtParams, fit_sgbt, predict_proba
from ..utils.datagen import Dataset
from ..utils.errors import ConfigError, DataError, DimensionMismatchError
from ..utils.serialize import write_frame


ADVISOR_FORMAT_VERSION = 1
REPORT_COLUMNS = ['error_prob', 'total', 'aleatoric', 'epistemic', 'risk_score']
LN2 = np.log(2.0)


# ------------------------------------------------------------------------
# Dataclass Definitions
# ------------------------------------------------------------------------

@dataclass(frozen=True)
class RiskWeights:
    """
    Weights of the risk score: model * error_prob + epistemic * epistemic
    + aleatoric * aleatoric.
    """
    model: float = 1.0
    epistemic: float = 1.0
    aleatoric: float = 1.0

    def __post_init__(self):
        for name in ('model', 'epistemic', 'aleatoric'):
            if getattr(self, name) < 0:
                raise ConfigError(f"Risk weight '{name}' must be non-negative", field=name)

    @classmethod
    def from_dict(cls, weights: Dict[str, float]) -> 'RiskWeights':
        unknown = set(weights) - {'model', 'epistemic', 'aleatoric'}
        if unknown:
            raise ConfigError(f"Unknown risk weight(s): {sorted(unknown)}", field=sorted(unknown)[0])
        return cls(**{k: float(v) for k, v in weights.items()})

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class AdvisorModel:
    """
    M independently seeded SGBT error predictors. With `include_prediction`
    the members were trained on the features plus a one-hot of the black-box
    label, so scoring needs those labels too.
    """
    members: Tuple[SgbtModel, ...]
    member_seeds: Tuple[int, ...]
    weights: RiskWeights = RiskWeights()
    include_prediction: bool = False
    class_count: Optional[int] = None

    def __post_init__(self):
        if len(self.members) < 1:
            raise ConfigError("An advisor needs at least one member", field='n_members')
        if len(self.member_seeds) != len(self.members):
            raise DataError("member_seeds and members differ in length")
        if self.include_prediction and not self.class_count:
            raise ConfigError("include_prediction needs class_count", field='include_prediction')

    @property
    def n_members(self) -> int:
        return len(self.members)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'version': ADVISOR_FORMAT_VERSION,
            'weights': self.weights.to_dict(),
            'member_seeds': list(self.member_seeds),
            'include_prediction': self.include_prediction,
            'class_count': self.class_count,
            'members': [member.to_dict() for member in self.members],
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'AdvisorModel':
        if doc.get('version') != ADVISOR_FORMAT_VERSION:
            raise DataError(f"Unsupported advisor version: {doc.get('version')}")
        return cls(
            members=tuple(SgbtModel.from_dict(member) for member in doc['members']),
            member_seeds=tuple(int(seed) for seed in doc['member_seeds']),
            weights=RiskWeights.from_dict(doc.get('weights', {})),
            include_prediction=bool(doc.get('include_prediction', False)),
            class_count=doc.get('class_count'),
        )


@dataclass(frozen=True, eq=False)
class UncertaintyReport:
    """Per-point uncertainty decomposition. All entropies are in bits."""
    member_probs: np.ndarray
    error_prob: np.ndarray
    total: np.ndarray
    aleatoric: np.ndarray
    epistemic: np.ndarray
    risk_score: np.ndarray

    @property
    def n_points(self) -> int:
        return len(self.error_prob)

    def to_frame(self, include_members: bool = False) -> pd.DataFrame:
        frame = pd.DataFrame({column: getattr(self, column) for column in REPORT_COLUMNS})
        if include_members:
            for m in range(self.member_probs.shape[1]):
                frame[f'member_{m}'] = self.member_probs[:, m]
        return frame


# ------------------------------------------------------------------------
# Uncertainty Decomposition
# ------------------------------------------------------------------------

def binary_entropy(p):
    """
    Shannon entropy in bits of a Bernoulli(p) variable, with 0 * log 0 = 0.

    Args:
        p: Probability or array of probabilities in [0, 1].

    Returns:
        Entropy with the shape of `p`; a float for scalar input.
    """
    values = np.asarray(p, dtype=float)
    if np.any(np.isnan(values)) or np.any(values < 0.0) or np.any(values > 1.0):
        raise DataError("binary_entropy needs probabilities in [0, 1]")
    entropy = np.clip((entr(values) + entr(1.0 - values)) / LN2, 0.0, 1.0)
    return float(entropy) if entropy.ndim == 0 else entropy


def decompose_probabilities(member_probs: np.ndarray, weights: RiskWeights = RiskWeights()) -> UncertaintyReport:
    """
    Splits total uncertainty into aleatoric and epistemic parts.

    total is the entropy of the ensemble-mean error probability; aleatoric is
    the mean member entropy; epistemic is their difference. Aleatoric is capped
    at total, which keeps epistemic non-negative and the identity
    total = aleatoric + epistemic exact. Statistics are taken over each row's
    sorted probabilities, so member order never changes a result. A row whose
    members all agree has epistemic exactly 0.

    Args:
        member_probs: N x M matrix of member error probabilities.
        weights: Risk score weights.

    Returns:
        UncertaintyReport: The decomposition for every row.
    """
    probs = np.asarray(member_probs, dtype=float)
    if probs.ndim == 1:
        probs = probs.reshape(-1, 1)
    if probs.ndim != 2 or probs.shape[1] < 1:
        raise DimensionMismatchError(f"member_probs must be N x M, got shape {probs.shape}")

    ordered = np.sort(probs, axis=1)
    # Rows where every member agrees carry no epistemic uncertainty, bit for bit.
    agree = ordered[:, 0] == ordered[:, -1]
    error_prob = np.where(agree, ordered[:, 0], ordered.mean(axis=1))
    total = binary_entropy(error_prob)
    aleatoric = np.where(agree, total, np.minimum(binary_entropy(ordered).mean(axis=1), total))
    epistemic = total - aleatoric
    risk_score = weights.model * error_prob + weights.epistemic * epistemic + weights.aleatoric * aleatoric

    return UncertaintyReport(
        member_probs=probs,
        error_prob=error_prob,
        total=total,
        aleatoric=aleatoric,
        epistemic=epistemic,
        risk_score=risk_score,
    )


def advisor_features(features: np.ndarray, predicted_labels: Optional[np.ndarray] = None,
                     class_count: Optional[int] = None) -> np.ndarray:
    """The meta-learner's input: features, optionally followed by a one-hot of the black-box label."""
    x = np.asarray(features, dtype=float)
    if predicted_labels is None:
        return x
    labels = np.asarray(predicted_labels, dtype=np.int64)
    if len(labels) != x.shape[0]:
        raise DimensionMismatchError(f"Got {len(labels)} predicted labels for {x.shape[0]} rows")
    return np.hstack([x, np.eye(class_count)[labels]])


def member_probabilities(a: AdvisorModel, features: np.ndarray,
                         predicted_labels: Optional[np.ndarray] = None) -> np.ndarray:
    if a.include_prediction:
        if predicted_labels is None:
            raise ConfigError("This advisor was trained with include_prediction; pass the black-box labels",
                              field='include_prediction')
        x = advisor_features(features, predicted_labels, a.class_count)
    else:
        x = np.asarray(features, dtype=float)
    return np.column_stack([predict_proba(member, x) for member in a.members])


def decompose(a: AdvisorModel, features: np.ndarray,
              predicted_labels: Optional[np.ndarray] = None) -> UncertaintyReport:
    return decompose_probabilities(member_probabilities(a, features, predicted_labels), a.weights)


# ------------------------------------------------------------------------
# Training
# ------------------------------------------------------------------------

def fit_advisor(
    features: np.ndarray,
    z: np.ndarray,
    params: SgbtParams,
    n_members: int = 10,
    weights: RiskWeights = RiskWeights(),
    predicted_labels: Optional[np.ndarray] = None,
    class_count: Optional[int] = None,
    n_jobs: int = 1,
) -> AdvisorModel:
    """
    Trains the ensemble on the black box's error indicator. Member m uses
    seed params.seed + m; nothing else differs between members.

    Args:
        features: N x D training features.
        z: Length-N error indicator.
        params: Shared SGBT hyperparameters.
        n_members: Ensemble size M (>= 1).
        weights: Risk score weights stored with the model.
        predicted_labels: When given, the black-box labels are appended to the
            features as a one-hot block.
        class_count: Number of classes; required with `predicted_labels`.
        n_jobs: joblib workers for member training.

    Returns:
        AdvisorModel: The trained advisor.
    """
    if n_members < 1:
        raise ConfigError(f"n_members must be at least 1, got {n_members}", field='n_members')
    include_prediction = predicted_labels is not None
    if include_prediction and not class_count:
        raise ConfigError("class_count is required with predicted_labels", field='class_count')
    x = advisor_features(features, predicted_labels, class_count)
    targets = np.asarray(z, dtype=bool).astype(float)

    seeds = tuple(params.seed + m for m in range(n_members))
    logging.info(f"Training {n_members} advisor member(s): {params.n_trees} trees, depth {params.max_depth}, "
                 f"sample rate {params.sample_rate}")
    members = Parallel(n_jobs=n_jobs)(
        delayed(fit_sgbt)(x, targets, params.with_seed(seed)) for seed in seeds
    )
    return AdvisorModel(
        members=tuple(members),
        member_seeds=seeds,
        weights=weights,
        include_prediction=include_prediction,
        class_count=class_count if include_prediction else None,
    )


def score_file(a: AdvisorModel, d: Dataset, path: str, include_members: bool = False,
               predicted_labels: Optional[np.ndarray] = None) -> UncertaintyReport:
    """Decomposes every row of `d` and writes the report CSV to `path`."""
    report = decompose(a, d.features, predicted_labels)
    write_frame(report.to_frame(include_members), path)
    logging.info(f"Wrote {report.n_points} report rows to {path}")
    return report


# ------------------------------------------------------------------------
# Hyperparameter Search
# ------------------------------------------------------------------------

DEFAULT_SEARCH_GRID: Dict[str, Tuple] = {
    'max_depth': (3, 4, 5, 6),
    'sample_rate': (0.25, 0.5, 0.75),
    'n_trees': (100, 1000),
}


def stratified_folds(z: np.ndarray, n_folds: int, seed: int) -> List[np.ndarray]:
    """Validation indices of each fold; each class is dealt round-robin after a seeded shuffle."""
    if n_folds < 2:
        raise ConfigError(f"cv_folds must be at least 2, got {n_folds}", field='cv_folds')
    targets = np.asarray(z, dtype=bool)
    if len(targets) < n_folds:
        raise DataError(f"Cannot make {n_folds} folds from {len(targets)} rows")
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(targets), dtype=np.int64)
    for value in (False, True):
        members = rng.permutation(np.flatnonzero(targets == value))
        assignment[members] = np.arange(len(members)) % n_folds
    return [np.flatnonzero(assignment == fold) for fold in range(n_folds)]


def validation_log_loss(z: np.ndarray, probabilities: np.ndarray) -> float:
    targets = np.asarray(z, dtype=float)
    return float(-np.mean(targets * np.log(probabilities) + (1.0 - targets) * np.log(1.0 - probabilities)))


def cross_validated_log_loss(features: np.ndarray, z: np.ndarray, params: SgbtParams,
                             folds: Sequence[np.ndarray]) -> float:
    x = np.asarray(features, dtype=float)
    targets = np.asarray(z, dtype=bool).astype(float)
    losses = []
    for validation in folds:
        training = np.setdiff1d(np.arange(len(targets)), validation)
        model = fit_sgbt(x[training], targets[training], params)
        losses.append(validation_log_loss(targets[validation], predict_proba(model, x[validation])))
    return float(np.mean(losses))


def grid_search_sgbt(
    features: np.ndarray,
    z: np.ndarray,
    base_params: SgbtParams,
    grid: Optional[Dict[str, Sequence]] = None,
    n_folds: int = 5,
    n_jobs: int = 1,
) -> Tuple[SgbtParams, pd.DataFrame]:
    """
    Picks SGBT hyperparameters by k-fold cross-validation of a single booster
    on the error indicator. Folds are stratified on z; the cell with the lowest
    mean validation log-loss wins, ties going to the earlier cell.

    Args:
        features: Training features.
        z: Error indicator.
        base_params: Values for every parameter the grid does not vary.
        grid: Parameter name -> candidate values. Defaults to DEFAULT_SEARCH_GRID.
        n_folds: Number of folds.
        n_jobs: joblib workers, one cell per task.

    Returns:
        Tuple[SgbtParams, pd.DataFrame]: The winning parameters and one row
            per cell with its mean validation log-loss.
    """
    grid = dict(grid or DEFAULT_SEARCH_GRID)
    unknown = set(grid) - set(SgbtParams.__dataclass_fields__)
    if unknown:
        raise ConfigError(f"Unknown grid parameter(s): {sorted(unknown)}", field=sorted(unknown)[0])
    names = list(grid)
    cells = [dict(zip(names, values)) for values in product(*(grid[name] for name in names))]
    if not cells:
        raise ConfigError("The search grid is empty", field='grid')
    folds = stratified_folds(z, n_folds, base_params.seed)

    logging.info(f"Grid search over {len(cells)} cells with {n_folds} folds")
    losses = Parallel(n_jobs=n_jobs)(
        delayed(cross_validated_log_loss)(features, z, replace(base_params, **cell), folds) for cell in cells
    )
    results = pd.DataFrame(cells)
    results['log_loss'] = losses
    best = int(np.argmin(losses))
    logging.info(f"Best cell: {cells[best]} (log-loss {losses[best]:.6f})")
    return replace(base_params, **cells[best]), results
