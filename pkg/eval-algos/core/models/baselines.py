from dataclasses import dataclass
import logging
import math
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial.distance import cdist

from ..utils.datagen import Dataset
from ..utils.errors import ConfigError, DataError, DimensionMismatchError, MissingProbabilitiesError


PROBA_SUM_TOLERANCE = 1e-6
DISTANCE_FLOOR = 1e-12
TRUST_SCORE_CAP = 1e12
DISTANCE_CHUNK_ROWS = 2048

# Declared search space for the Trust Score hyperparameters.
TRUST_GRID: Dict[str, Tuple] = {
    'alpha': (0.0, 1 / 32, 1 / 16, 1 / 8),
    'k_density': (5, 10, 20),
}


# ------------------------------------------------------------------------
# Max Class Probability
# ------------------------------------------------------------------------

def mcp_confidence(probabilities: Optional[np.ndarray]) -> np.ndarray:
    """Row-wise maximum class probability."""
    if probabilities is None:
        raise MissingProbabilitiesError(
            "Confidence baseline needs class probabilities; this black box only provides labels"
        )
    probs = np.asarray(probabilities, dtype=float)
    if probs.ndim != 2:
        raise DimensionMismatchError(f"Probabilities must be N x C, got shape {probs.shape}")
    off = np.abs(probs.sum(axis=1) - 1.0) > PROBA_SUM_TOLERANCE
    if off.any():
        row = int(np.flatnonzero(off)[0]) + 1
        raise DataError(f"Probabilities at row {row} do not sum to 1", row=row)
    return probs.max(axis=1)


# ------------------------------------------------------------------------
# Trust Score
# ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class TrustModel:
    """
    Per-class high-density point sets. Set c keeps the class-c training points
    whose k_density-th nearest same-class neighbor is closest.
    """
    high_density_sets: Tuple[np.ndarray, ...]
    alpha: float
    k_density: int

    @property
    def class_count(self) -> int:
        return len(self.high_density_sets)


def _kth_neighbor_radii(points: np.ndarray, k: int) -> np.ndarray:
    # Column 0 of each sorted distance row is the point itself.
    radii = np.empty(len(points))
    for start in range(0, len(points), DISTANCE_CHUNK_ROWS):
        block = cdist(points[start:start + DISTANCE_CHUNK_ROWS], points)
        radii[start:start + len(block)] = np.partition(block, k, axis=1)[:, k]
    return radii


def _nearest_distances(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    nearest = np.empty(len(queries))
    for start in range(0, len(queries), DISTANCE_CHUNK_ROWS):
        block = cdist(queries[start:start + DISTANCE_CHUNK_ROWS], points)
        nearest[start:start + len(block)] = block.min(axis=1)
    return nearest


def fit_trust(train: Dataset, alpha: float = 0.0625, k_density: int = 10) -> TrustModel:
    """
    Builds the alpha-high-density set of every class.

    For each class, every point's distance to its k_density-th nearest
    same-class neighbor is computed and the floor(alpha * n_c) points with the
    largest such radius are dropped (ties keep the earlier row).

    Args:
        train: Standardized training data.
        alpha: Fraction of each class to discard, in [0, 1).
        k_density: Neighbor rank used as the density radius.

    Returns:
        TrustModel: The fitted filter.
    """
    if not 0.0 <= alpha < 1.0:
        raise ConfigError(f"alpha must lie in [0, 1), got {alpha}", field='trust_alpha')
    if k_density < 1:
        raise ConfigError(f"k_density must be at least 1, got {k_density}", field='trust_k')

    sets = []
    for cls in range(train.class_count):
        points = train.features[train.labels == cls]
        n_c = len(points)
        if n_c < k_density + 1:
            raise DataError(f"Trust score needs at least {k_density + 1} points in class {cls}, got {n_c}")
        n_drop = int(math.floor(alpha * n_c + 1e-9))
        if n_drop:
            radii = _kth_neighbor_radii(points, k_density)
            keep = np.sort(np.argsort(radii, kind='stable')[:n_c - n_drop])
            points = points[keep]
        logging.debug(f"Trust score class {cls}: kept {len(points)} of {n_c} points")
        sets.append(points.copy())
    return TrustModel(high_density_sets=tuple(sets), alpha=alpha, k_density=k_density)


def trust_scores(tm: TrustModel, features: np.ndarray, predicted_labels: Sequence[int]) -> np.ndarray:
    """
    Vectorized trust score: distance to the nearest other-class set divided by
    the distance to the predicted class's set, capped at 1e12.
    """
    x = np.asarray(features, dtype=float)
    labels = np.asarray(predicted_labels, dtype=np.int64)
    if x.ndim != 2 or len(labels) != x.shape[0]:
        raise DimensionMismatchError(f"Got {len(labels)} labels for features of shape {x.shape}")
    if len(labels) and (labels.min() < 0 or labels.max() >= tm.class_count):
        raise DataError(f"Predicted labels must lie in [0, {tm.class_count})")
    for cls, points in enumerate(tm.high_density_sets):
        if len(points) == 0:
            raise DataError(f"High-density set of class {cls} is empty")

    distances = np.column_stack([_nearest_distances(x, points) for points in tm.high_density_sets])
    rows = np.arange(len(labels))
    d_same = distances[rows, labels]
    others = distances.copy()
    others[rows, labels] = np.inf
    d_other = others.min(axis=1)
    ratio = d_other / np.maximum(d_same, DISTANCE_FLOOR)
    # A query sitting on its own class set scores the cap whatever d_other is.
    return np.where(d_same <= DISTANCE_FLOOR, TRUST_SCORE_CAP, np.minimum(ratio, TRUST_SCORE_CAP))


def trust_score(tm: TrustModel, x: Sequence[float], predicted_label: int) -> float:
    return float(trust_scores(tm, np.asarray(x, dtype=float).reshape(1, -1), [predicted_label])[0])
