from dataclasses import dataclass
import logging
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.integrate import trapezoid
from scipy.stats import rankdata

from .advisor import UncertaintyReport, decompose, fit_advisor
from .baselines import fit_trust, mcp_confidence, trust_scores
from .bbox import BlackBoxConfig, BlackBoxModel, error_indicator, predict, train_black_box
from .sgbt import SgbtParams
from ..utils.datagen import Dataset
from ..utils.errors import ConfigError, DataError, DimensionMismatchError


ORIENTATIONS = ('higher_is_positive', 'lower_is_positive')
STRATEGIES = ('epistemic_desc', 'confidence_asc', 'trust_asc', 'random')


# ------------------------------------------------------------------------
# Dataclass Definitions
# ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RankedScores:
    scores: np.ndarray
    positives: np.ndarray
    orientation: str = 'higher_is_positive'

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ConfigError(f"orientation must be one of {ORIENTATIONS}, got '{self.orientation}'",
                              field='orientation')
        scores = np.asarray(self.scores, dtype=float).reshape(-1)
        positives = np.asarray(self.positives, dtype=bool).reshape(-1)
        if len(scores) != len(positives):
            raise DimensionMismatchError(f"Got {len(scores)} scores and {len(positives)} labels")
        object.__setattr__(self, 'scores', scores)
        object.__setattr__(self, 'positives', positives)

    def oriented(self) -> np.ndarray:
        """Scores flipped so that higher always means 'more likely positive'."""
        return self.scores if self.orientation == 'higher_is_positive' else -self.scores

    def class_counts(self) -> Tuple[int, int]:
        n_pos = int(self.positives.sum())
        n_neg = len(self.positives) - n_pos
        if n_pos == 0 or n_neg == 0:
            raise DataError("Ranking metrics need at least one positive and one negative")
        return n_pos, n_neg


@dataclass(frozen=True, eq=False)
class ARCurve:
    rejection_fractions: np.ndarray
    accuracies: np.ndarray
    prr: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({'fraction': self.rejection_fractions, 'value': self.accuracies})


@dataclass(frozen=True)
class RetrainConfig:
    """Settings of the sample-and-retrain experiment."""
    enabled: bool = False
    strategies: Tuple[str, ...] = STRATEGIES
    k_percent: float = 5.0
    rounds: int = 8
    with_replacement: bool = True
    pool_fraction: float = 0.5

    def __post_init__(self):
        unknown = [s for s in self.strategies if s not in STRATEGIES]
        if unknown:
            raise ConfigError(f"Unknown sample-retrain strategy '{unknown[0]}'", field='strategies')
        if not 0.0 < self.k_percent <= 100.0:
            raise ConfigError(f"k_percent must lie in (0, 100], got {self.k_percent}", field='k_percent')
        if self.rounds < 0:
            raise ConfigError(f"rounds must be non-negative, got {self.rounds}", field='rounds')
        if not 0.0 < self.pool_fraction < 1.0:
            raise ConfigError(f"pool_fraction must lie in (0, 1), got {self.pool_fraction}",
                              field='pool_fraction')
        object.__setattr__(self, 'strategies', tuple(self.strategies))


# ------------------------------------------------------------------------
# Ranking Metrics
# ------------------------------------------------------------------------

def auroc(r: RankedScores) -> float:
    """
    Mann-Whitney estimate P(score_pos > score_neg) + P(tie) / 2, computed from
    average ranks.
    """
    n_pos, n_neg = r.class_counts()
    ranks = rankdata(r.oriented(), method='average')
    u = ranks[r.positives].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def average_precision(r: RankedScores) -> float:
    """
    Step-wise average precision. Points sharing a score enter the ranking
    together as one group.
    """
    n_pos, _ = r.class_counts()
    scores = r.oriented()
    order = np.argsort(-scores, kind='stable')
    ranked_scores = scores[order]
    hits = r.positives[order].astype(float)

    group_ends = np.r_[np.flatnonzero(np.diff(ranked_scores) != 0), len(scores) - 1]
    true_positives = np.cumsum(hits)[group_ends]
    retrieved = group_ends + 1.0
    precision = true_positives / retrieved
    recall = true_positives / n_pos
    return float(np.sum(np.diff(np.r_[0.0, recall]) * precision))


def ood_auroc(scores: Sequence[float], is_ood: Sequence[bool], orientation: str) -> float:
    """AUROC with out-of-distribution points as the positive class."""
    return auroc(RankedScores(np.asarray(scores), np.asarray(is_ood), orientation))


# ------------------------------------------------------------------------
# Abstention
# ------------------------------------------------------------------------

def _residual_error_counts(scores: np.ndarray, errors: np.ndarray) -> np.ndarray:
    """Errors still answered after rejecting the k riskiest points, for k = 0..N."""
    order = np.argsort(-scores, kind='stable')
    rejected_errors = np.r_[0, np.cumsum(errors[order].astype(np.int64))]
    return int(errors.sum()) - rejected_errors


def _check_pair(scores: Sequence[float], errors: Sequence[bool]) -> Tuple[np.ndarray, np.ndarray]:
    s = np.asarray(scores, dtype=float).reshape(-1)
    e = np.asarray(errors, dtype=bool).reshape(-1)
    if len(s) != len(e):
        raise DimensionMismatchError(f"Got {len(s)} scores and {len(e)} error flags")
    if len(s) == 0:
        raise DataError("Abstention metrics need at least one point")
    return s, e


def prr(scores: Sequence[float], errors: Sequence[bool]) -> float:
    """
    Prediction rejection ratio: the area between the random-rejection and the
    scored residual-error curves, divided by the same area for the oracle that
    rejects every error first. 1 is a perfect ordering, 0 is random.
    """
    s, e = _check_pair(scores, errors)
    n = len(s)
    n_errors = int(e.sum())
    if n_errors == 0 or n_errors == n:
        raise DataError("prr needs at least one error and one correct prediction")

    k = np.arange(n + 1)
    rejected = k / n
    random_curve = (n_errors / n) * (1.0 - rejected)
    method_curve = _residual_error_counts(s, e) / n
    oracle_curve = np.maximum(0, n_errors - k) / n

    method_area = trapezoid(random_curve - method_curve, rejected)
    oracle_area = trapezoid(random_curve - oracle_curve, rejected)
    return float(method_area / oracle_area)


def accuracy_rejection_curve(scores: Sequence[float], errors: Sequence[bool], grid_step: float = 0.01) -> ARCurve:
    """
    Accuracy after deferring the riskiest fraction of points to an oracle.

    At rejection fraction rho the ceil(rho * N) highest-scoring points count
    as correct; equal scores are rejected in ascending row order.

    Args:
        scores: Risk scores, higher means reject first.
        errors: Black-box error flags.
        grid_step: Spacing of the rejection grid; must divide 1.

    Returns:
        ARCurve: Rejection grid, accuracies and the PRR (nan when undefined).
    """
    s, e = _check_pair(scores, errors)
    steps = int(round(1.0 / grid_step)) if grid_step > 0 else 0
    if steps < 1 or abs(steps * grid_step - 1.0) > 1e-9:
        raise ConfigError(f"grid_step must divide 1 evenly, got {grid_step}", field='grid_step')

    n = len(s)
    residual = _residual_error_counts(s, e)
    j = np.arange(steps + 1)
    rejected_counts = (j * n + steps - 1) // steps
    accuracies = 1.0 - residual[rejected_counts] / n

    n_errors = int(e.sum())
    ratio = prr(s, e) if 0 < n_errors < n else float('nan')
    return ARCurve(rejection_fractions=j / steps, accuracies=accuracies, prr=ratio)


# ------------------------------------------------------------------------
# Metric Bundles
# ------------------------------------------------------------------------

def _score_table(report: UncertaintyReport, confidence: Optional[np.ndarray],
                 trust: Optional[np.ndarray]) -> Dict[str, Tuple[np.ndarray, str]]:
    """Every available scorer with the orientation under which it flags risk."""
    table = {
        'error_prob': (report.error_prob, 'higher_is_positive'),
        'risk_score': (report.risk_score, 'higher_is_positive'),
        'total': (report.total, 'higher_is_positive'),
        'aleatoric': (report.aleatoric, 'higher_is_positive'),
        'epistemic': (report.epistemic, 'higher_is_positive'),
    }
    if confidence is not None:
        table['mcp_confidence'] = (confidence, 'lower_is_positive')
    if trust is not None:
        table['trust_score'] = (trust, 'lower_is_positive')
    return table


def _has_both(flags: np.ndarray) -> bool:
    return 0 < int(np.sum(flags)) < len(flags)


def failure_metrics(report: UncertaintyReport, z: np.ndarray, confidence: Optional[np.ndarray] = None,
                    trust: Optional[np.ndarray] = None) -> Dict[str, Dict[str, Optional[float]]]:
    """AUROC and AUPR of each scorer for detecting black-box errors (errors are the positive class)."""
    z = np.asarray(z, dtype=bool)
    if not _has_both(z):
        logging.warning("Test errors are all-or-nothing; failure metrics are undefined")
        return {name: {'auroc': None, 'aupr': None} for name in _score_table(report, confidence, trust)}
    metrics = {}
    for name, (scores, orientation) in _score_table(report, confidence, trust).items():
        ranked = RankedScores(scores, z, orientation)
        metrics[name] = {'auroc': auroc(ranked), 'aupr': average_precision(ranked)}
    return metrics


def ood_metrics(report: UncertaintyReport, is_ood: np.ndarray, confidence: Optional[np.ndarray] = None,
                trust: Optional[np.ndarray] = None) -> Dict[str, Optional[float]]:
    is_ood = np.asarray(is_ood, dtype=bool)
    table = _score_table(report, confidence, trust)
    if not _has_both(is_ood):
        logging.warning("Test set lacks in- or out-of-distribution points; OOD metrics are undefined")
        return {name: None for name in table}
    return {name: ood_auroc(scores, is_ood, orientation) for name, (scores, orientation) in table.items()}


def risk_oriented(scores: np.ndarray, orientation: str) -> np.ndarray:
    """Scores turned into 'reject highest first' order."""
    return np.asarray(scores, dtype=float) if orientation == 'higher_is_positive' else -np.asarray(scores, dtype=float)


def abstention_metrics(report: UncertaintyReport, z: np.ndarray, confidence: Optional[np.ndarray] = None,
                       trust: Optional[np.ndarray] = None,
                       grid_step: float = 0.01) -> Tuple[Dict[str, Any], pd.DataFrame]:
    """
    PRR and accuracy-rejection endpoints per scorer, plus all curves in long
    format (scorer, fraction, value).
    """
    z = np.asarray(z, dtype=bool)
    metrics, curves = {}, []
    for name, (scores, orientation) in _score_table(report, confidence, trust).items():
        curve = accuracy_rejection_curve(risk_oriented(scores, orientation), z, grid_step)
        metrics[name] = {
            'prr': None if np.isnan(curve.prr) else curve.prr,
            'accuracy_at_0': float(curve.accuracies[0]),
            'accuracy_at_1': float(curve.accuracies[-1]),
        }
        frame = curve.to_frame()
        frame.insert(0, 'scorer', name)
        curves.append(frame)
    return metrics, pd.concat(curves, ignore_index=True)


# ------------------------------------------------------------------------
# Sample and Retrain
# ------------------------------------------------------------------------

def ood_accuracy(model: BlackBoxModel, test: Dataset) -> float:
    if test.is_ood is None or not test.is_ood.any():
        raise DataError("sample_retrain needs a test set with out-of-distribution points")
    labels, _ = predict(model, test)
    return float(np.mean(labels[test.is_ood] == test.labels[test.is_ood]))


def _pool_priorities(strategy: str, model: BlackBoxModel, current: Dataset, pool: Dataset,
                     advisor_params: SgbtParams, n_members: int, trust_alpha: float, trust_k: int,
                     n_jobs: int) -> np.ndarray:
    """Higher value = move to training first."""
    if strategy == 'epistemic_desc':
        train_labels, _ = predict(model, current)
        z = error_indicator(current.labels, train_labels).z
        advisor = fit_advisor(current.features, z, advisor_params, n_members, n_jobs=n_jobs)
        return decompose(advisor, pool.features).epistemic
    pool_labels, pool_probs = predict(model, pool)
    if strategy == 'confidence_asc':
        return -mcp_confidence(pool_probs)
    tm = fit_trust(current, trust_alpha, trust_k)
    return -trust_scores(tm, pool.features, pool_labels)


def sample_retrain(
    train: Dataset,
    pool: Dataset,
    test: Dataset,
    strategy: str,
    k_percent: float,
    rounds: int,
    bbox_config: BlackBoxConfig,
    advisor_params: SgbtParams,
    n_members: int = 10,
    trust_alpha: float = 0.0625,
    trust_k: int = 10,
    seed: int = 0,
    with_replacement: bool = True,
    n_jobs: int = 1,
) -> pd.DataFrame:
    """
    Grows the training set from `pool` round by round and tracks the black
    box's accuracy on the out-of-distribution part of `test`.

    Each round scores the pool with the strategy's current model (the advisor
    is retrained from the current black box for epistemic_desc), moves the top
    k_percent of the pool into training and retrains the black box. With
    replacement, already-moved points stay selectable and may be added again.

    Args:
        train: Initial training set.
        pool: Candidate points.
        test: Evaluation set with is_ood flags.
        strategy: One of epistemic_desc, confidence_asc, trust_asc, random.
        k_percent: Share of the pool moved per round, in percent.
        rounds: Number of rounds.
        bbox_config: Black-box trainer settings.
        advisor_params: SGBT settings for the epistemic strategy.
        n_members: Advisor ensemble size.
        trust_alpha: Trust Score filter fraction.
        trust_k: Trust Score density rank.
        seed: Seed of the random strategy.
        with_replacement: Whether moved points remain in the pool.
        n_jobs: joblib workers for advisor members.

    Returns:
        pd.DataFrame: Columns fraction (cumulative share of the pool moved)
            and value (OOD accuracy), starting at (0, baseline).
    """
    if strategy not in STRATEGIES:
        raise ConfigError(f"Unknown strategy '{strategy}'", field='strategy')
    if bbox_config.kind == 'external':
        raise ConfigError("sample_retrain needs a trainable black box", field='kind')
    if pool.n_samples == 0:
        raise DataError("sample_retrain needs a non-empty pool")
    if not 0.0 < k_percent <= 100.0:
        raise ConfigError(f"k_percent must lie in (0, 100], got {k_percent}", field='k_percent')

    rng = np.random.default_rng(seed)
    per_round = max(1, int(round(k_percent / 100.0 * pool.n_samples)))
    available = np.ones(pool.n_samples, dtype=bool)
    current = train
    model = train_black_box(current, bbox_config)
    moved = 0
    curve = [(0.0, ood_accuracy(model, test))]

    for round_index in range(rounds):
        candidates = np.arange(pool.n_samples) if with_replacement else np.flatnonzero(available)
        if len(candidates) == 0:
            logging.info(f"{strategy}: pool exhausted after {round_index} rounds")
            break
        take = min(per_round, len(candidates))
        if strategy == 'random':
            chosen = rng.choice(candidates, size=take, replace=False)
        else:
            candidate_pool = pool.subset(candidates)
            priorities = _pool_priorities(strategy, model, current, candidate_pool, advisor_params,
                                          n_members, trust_alpha, trust_k, n_jobs)
            chosen = candidates[np.argsort(-priorities, kind='stable')[:take]]

        current = Dataset.concat([current, pool.subset(np.sort(chosen))])
        available[chosen] = False
        moved += take
        model = train_black_box(current, bbox_config)
        curve.append((moved / pool.n_samples, ood_accuracy(model, test)))
        logging.debug(f"{strategy} round {round_index + 1}: moved {moved}, OOD accuracy {curve[-1][1]:.4f}")

    return pd.DataFrame(curve, columns=['fraction', 'value'])
