from dataclasses import asdict, dataclass, field, replace
import json
import logging
import math
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit, logit

from ..utils.errors import ConfigError, DataError, DimensionMismatchError, NumericError


PROBA_EPS = 1e-6
LEAF_VALUE_LIMIT = 4.0
MODEL_FORMAT_VERSION = 1
LOG_EVERY_N_ROUNDS = 100


# ------------------------------------------------------------------------
# Dataclass Definitions
# ------------------------------------------------------------------------

@dataclass(frozen=True)
class SgbtParams:
    """
    Hyperparameters of one stochastic gradient-boosted tree ensemble.
    """
    n_trees: int = 1000
    max_depth: int = 4
    learning_rate: float = 0.1
    sample_rate: float = 0.5
    min_samples_leaf: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.n_trees < 0:
            raise ConfigError(f"n_trees must be non-negative, got {self.n_trees}", field='n_trees')
        if self.max_depth < 1:
            raise ConfigError(f"max_depth must be at least 1, got {self.max_depth}", field='max_depth')
        if not 0.0 < self.learning_rate <= 1.0:
            raise ConfigError(f"learning_rate must lie in (0, 1], got {self.learning_rate}",
                              field='learning_rate')
        if not 0.0 < self.sample_rate <= 1.0:
            raise ConfigError(f"sample_rate must lie in (0, 1], got {self.sample_rate}",
                              field='sample_rate')
        if self.min_samples_leaf < 1:
            raise ConfigError(f"min_samples_leaf must be at least 1, got {self.min_samples_leaf}",
                              field='min_samples_leaf')
        if self.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {self.seed}", field='seed')

    @classmethod
    def from_dict(cls, params: Dict[str, Any]) -> 'SgbtParams':
        unknown = set(params) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown SGBT parameter(s): {sorted(unknown)}", field=sorted(unknown)[0])
        return cls(**params)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def with_seed(self, seed: int) -> 'SgbtParams':
        return replace(self, seed=seed)


@dataclass(frozen=True)
class Split:
    feature_index: int
    threshold: float
    gain: float


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """
    Binary regression tree stored as parallel node arrays. Node 0 is the root;
    leaves have feature == -1. A row goes left iff x[feature] <= threshold.
    """
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    max_depth: int

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        def walk(node: int) -> int:
            if self.feature[node] < 0:
                return 0
            return 1 + max(walk(self.left[node]), walk(self.right[node]))
        return walk(0)

    def predict(self, features: np.ndarray) -> np.ndarray:
        node = np.zeros(features.shape[0], dtype=np.int64)
        while True:
            active = np.flatnonzero(self.feature[node] >= 0)
            if len(active) == 0:
                return self.value[node]
            current = node[active]
            go_left = features[active, self.feature[current]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])

    def to_dict(self, node: int = 0) -> Dict[str, Any]:
        if self.feature[node] < 0:
            return {'value': float(self.value[node])}
        return {
            'feature_index': int(self.feature[node]),
            'threshold': float(self.threshold[node]),
            'left': self.to_dict(int(self.left[node])),
            'right': self.to_dict(int(self.right[node])),
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any], max_depth: int) -> 'RegressionTree':
        builder = _TreeBuilder()

        def visit(node_doc: Dict[str, Any]) -> int:
            if 'value' in node_doc:
                return builder.add_leaf(node_doc['value'])
            node_id = builder.add_split(node_doc['feature_index'], node_doc['threshold'])
            builder.attach(node_id, visit(node_doc['left']), visit(node_doc['right']))
            return node_id

        visit(doc)
        return builder.build(max_depth)


@dataclass(frozen=True, eq=False)
class SgbtModel:
    """
    Fitted booster. Scores are base_score + learning_rate * sum of tree outputs;
    probabilities are the clamped sigmoid of the score.
    """
    base_score: float
    trees: Tuple[RegressionTree, ...]
    params: SgbtParams
    n_features: int
    loss_history: Tuple[float, ...] = field(default=(), repr=False)

    def to_dict(self) -> Dict[str, Any]:
        return {
            'version': MODEL_FORMAT_VERSION,
            'params': self.params.to_dict(),
            'n_features': self.n_features,
            'base_score': float(self.base_score),
            'trees': [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, doc: Dict[str, Any]) -> 'SgbtModel':
        version = doc.get('version')
        if version != MODEL_FORMAT_VERSION:
            raise DataError(f"Unsupported SGBT model version: {version}")
        params = SgbtParams.from_dict(doc['params'])
        return cls(
            base_score=float(doc['base_score']),
            trees=tuple(RegressionTree.from_dict(t, params.max_depth) for t in doc['trees']),
            params=params,
            n_features=int(doc['n_features']),
        )


class _TreeBuilder:
    def __init__(self):
        self.feature: List[int] = []
        self.threshold: List[float] = []
        self.left: List[int] = []
        self.right: List[int] = []
        self.value: List[float] = []

    def _add(self, feature: int, threshold: float, value: float) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def add_leaf(self, value: float) -> int:
        return self._add(-1, 0.0, value)

    def add_split(self, feature: int, threshold: float) -> int:
        return self._add(feature, threshold, 0.0)

    def attach(self, node: int, left: int, right: int) -> None:
        self.left[node] = left
        self.right[node] = right

    def build(self, max_depth: int) -> RegressionTree:
        arrays = dict(
            feature=np.asarray(self.feature, dtype=np.int64),
            threshold=np.asarray(self.threshold, dtype=float),
            left=np.asarray(self.left, dtype=np.int64),
            right=np.asarray(self.right, dtype=np.int64),
            value=np.asarray(self.value, dtype=float),
        )
        for array in arrays.values():
            array.setflags(write=False)
        return RegressionTree(max_depth=max_depth, **arrays)


# ------------------------------------------------------------------------
# Split Search
# ------------------------------------------------------------------------

def _midpoint(lower: float, upper: float) -> float:
    threshold = lower + (upper - lower) / 2.0
    # Adjacent floats: the midpoint may round up onto `upper`.
    return threshold if threshold < upper else lower


def find_best_split(
    features: np.ndarray,
    residuals: np.ndarray,
    rows: np.ndarray,
    min_samples_leaf: int = 1,
) -> Optional[Split]:
    """
    Exact variance-reduction split search over every feature.

    Candidates are midpoints between consecutive distinct values among `rows`,
    leaving at least `min_samples_leaf` rows on each side. The gain is the drop
    in residual sum of squares divided by the node size. Ties go to the lower
    feature index, then the lower threshold.

    Args:
        features: Full N x D feature matrix.
        residuals: Length-N residual vector.
        rows: Indices of the rows in the node.
        min_samples_leaf: Minimum rows per child.

    Returns:
        Optional[Split]: Best split, or None when no candidate has positive gain.
    """
    rows = np.asarray(rows, dtype=np.int64)
    n = len(rows)
    if n < 2 * min_samples_leaf or n < 2:
        return None
    r = residuals[rows]
    if np.ptp(r) == 0:
        return None
    r = r - r.mean()
    total = r.sum()

    x = features[rows]
    order = np.argsort(x, axis=0, kind='stable')
    xs = np.take_along_axis(x, order, axis=0)
    left_sums = np.cumsum(r[order], axis=0)[:-1]
    n_left = np.arange(1, n, dtype=float)[:, None]
    n_right = n - n_left

    gains = (left_sums ** 2 / n_left + (total - left_sums) ** 2 / n_right - total ** 2 / n) / n
    valid = (xs[1:] > xs[:-1]) & (n_left >= min_samples_leaf) & (n_right >= min_samples_leaf)
    gains = np.where(valid, gains, -np.inf)

    best_rows = np.argmax(gains, axis=0)
    best_gains = gains[best_rows, np.arange(x.shape[1])]
    feature_index = int(np.argmax(best_gains))
    gain = float(best_gains[feature_index])
    if not gain > 0.0:
        return None
    position = best_rows[feature_index]
    threshold = _midpoint(xs[position, feature_index], xs[position + 1, feature_index])
    return Split(feature_index, float(threshold), gain)


def _newton_leaf_value(gradient_sum: float, hessian_sum: float) -> float:
    if hessian_sum <= 0.0:
        return 0.0
    return float(np.clip(gradient_sum / hessian_sum, -LEAF_VALUE_LIMIT, LEAF_VALUE_LIMIT))


def grow_tree(
    features: np.ndarray,
    residuals: np.ndarray,
    hessians: np.ndarray,
    rows: np.ndarray,
    max_depth: int,
    min_samples_leaf: int,
) -> RegressionTree:
    """Fits one tree to `residuals` on `rows`; leaves hold a single Newton step."""
    builder = _TreeBuilder()

    def build(node_rows: np.ndarray, depth: int) -> int:
        split = None
        if depth < max_depth:
            split = find_best_split(features, residuals, node_rows, min_samples_leaf)
        if split is None:
            return builder.add_leaf(
                _newton_leaf_value(residuals[node_rows].sum(), hessians[node_rows].sum())
            )
        node_id = builder.add_split(split.feature_index, split.threshold)
        goes_left = features[node_rows, split.feature_index] <= split.threshold
        left = build(node_rows[goes_left], depth + 1)
        right = build(node_rows[~goes_left], depth + 1)
        builder.attach(node_id, left, right)
        return node_id

    build(np.asarray(rows, dtype=np.int64), 0)
    return builder.build(max_depth)


# ------------------------------------------------------------------------
# Boosting
# ------------------------------------------------------------------------

def subsample_size(n_rows: int, sample_rate: float) -> int:
    """ceil(sample_rate * n_rows), ignoring float residue such as 0.7 * 10 = 7.000000000000001."""
    return max(1, int(math.ceil(round(sample_rate * n_rows, 9))))


def round_rows(n_rows: int, params: SgbtParams, round_index: int) -> np.ndarray:
    """Rows drawn without replacement for one boosting round, seeded by (seed, round)."""
    if params.sample_rate >= 1.0:
        return np.arange(n_rows)
    rng = np.random.default_rng([params.seed, round_index])
    size = subsample_size(n_rows, params.sample_rate)
    return np.sort(rng.choice(n_rows, size=size, replace=False))


def log_loss_from_scores(scores: np.ndarray, z: np.ndarray) -> float:
    """Mean binomial log-loss evaluated on raw scores (no probability clamp)."""
    return float(np.mean(np.logaddexp(0.0, scores) - z * scores))


def _check_features(features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim != 2:
        raise DataError(f"Features must be a 2-D matrix, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        row = int(np.argwhere(~np.isfinite(x))[0][0]) + 1
        raise DataError(f"Non-finite feature value at row {row}", row=row)
    return x


def fit_sgbt(features: np.ndarray, z: np.ndarray, params: SgbtParams) -> SgbtModel:
    """
    Fits a stochastic gradient-boosted tree classifier on binary targets.

    Each round fits a regression tree to the log-loss negative gradient
    z - p on a subsample of rows drawn without replacement, then moves the
    scores by learning_rate times the tree output.

    Args:
        features: N x D feature matrix (N >= 2).
        z: Length-N binary targets.
        params: Boosting hyperparameters.

    Returns:
        SgbtModel: The fitted model, including its per-round training loss.
    """
    x = _check_features(features)
    targets = np.asarray(z, dtype=float).reshape(-1)
    n_rows = x.shape[0]
    if n_rows < 2:
        raise DataError(f"fit_sgbt needs at least 2 rows, got {n_rows}")
    if len(targets) != n_rows:
        raise DimensionMismatchError(f"Got {len(targets)} targets for {n_rows} feature rows")

    positive_rate = float(np.clip(targets.mean(), PROBA_EPS, 1.0 - PROBA_EPS))
    base_score = float(logit(positive_rate))
    scores = np.full(n_rows, base_score)
    history = [log_loss_from_scores(scores, targets)]
    trees = []

    for round_index in range(params.n_trees):
        p = expit(scores)
        residuals = targets - p
        hessians = p * (1.0 - p)
        rows = round_rows(n_rows, params, round_index)
        tree = grow_tree(x, residuals, hessians, rows, params.max_depth, params.min_samples_leaf)
        scores = scores + params.learning_rate * tree.predict(x)
        trees.append(tree)

        loss = log_loss_from_scores(scores, targets)
        if not math.isfinite(loss):
            raise NumericError(f"Training loss became non-finite at round {round_index + 1}")
        history.append(loss)
        if (round_index + 1) % LOG_EVERY_N_ROUNDS == 0:
            logging.debug(f"sgbt seed={params.seed} round {round_index + 1}: log-loss {loss:.6f}")

    return SgbtModel(
        base_score=base_score,
        trees=tuple(trees),
        params=params,
        n_features=x.shape[1],
        loss_history=tuple(history),
    )


def decision_function(m: SgbtModel, features: np.ndarray) -> np.ndarray:
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != m.n_features:
        raise DimensionMismatchError(
            f"Model expects {m.n_features} features, got shape {x.shape}"
        )
    scores = np.full(x.shape[0], m.base_score)
    for tree in m.trees:
        scores = scores + m.params.learning_rate * tree.predict(x)
    return scores


def predict_proba(m: SgbtModel, features: np.ndarray) -> np.ndarray:
    """Error probability per row, clamped to [1e-6, 1 - 1e-6]."""
    return np.clip(expit(decision_function(m, features)), PROBA_EPS, 1.0 - PROBA_EPS)


def to_json(m: SgbtModel) -> str:
    return json.dumps(m.to_dict())


def from_json(text: str) -> SgbtModel:
    return SgbtModel.from_dict(json.loads(text))
