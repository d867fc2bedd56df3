import logging
import math
import os
from dataclasses import dataclass, replace
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import (
    CellParseError,
    ConfigError,
    DataError,
    DatasetNotFoundError,
    EmptyDatasetError,
    MissingColumnError,
)
from .serialize import write_frame


ZERO_SCALE_TOLERANCE = 1e-12

# ------------------------------------------------------------------------
# Dataclass Definitions
# ------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Feature matrix plus labels; the common currency of every pipeline step.

    Arrays are copied on construction and made read-only, so a Dataset can be
    shared freely once built.
    """
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    feature_names: Tuple[str, ...]
    is_ood: Optional[np.ndarray] = None
    seed: Optional[int] = None

    def __post_init__(self):
        features = np.array(self.features, dtype=float)
        if features.ndim != 2:
            raise DataError(f"Features must be a 2-D matrix, got shape {features.shape}")
        labels = np.array(self.labels, dtype=np.int64).reshape(-1)
        n_rows, n_cols = features.shape
        if len(labels) != n_rows:
            raise DataError(f"Got {len(labels)} labels for {n_rows} feature rows")
        if not np.all(np.isfinite(features)):
            bad_row, bad_col = np.argwhere(~np.isfinite(features))[0]
            raise DataError(
                f"Non-finite feature value at row {bad_row + 1}",
                row=int(bad_row) + 1,
                column=str(list(self.feature_names)[bad_col]) if len(self.feature_names) == n_cols else None,
            )
        if self.class_count < 2:
            raise DataError(f"class_count must be at least 2, got {self.class_count}")
        if n_rows and (labels.min() < 0 or labels.max() >= self.class_count):
            raise DataError(f"Labels must lie in [0, {self.class_count}), got range "
                            f"[{labels.min()}, {labels.max()}]")
        names = tuple(str(name) for name in self.feature_names)
        if len(names) != n_cols:
            raise DataError(f"Got {len(names)} feature names for {n_cols} feature columns")

        is_ood = None
        if self.is_ood is not None:
            is_ood = np.array(self.is_ood, dtype=bool).reshape(-1)
            if len(is_ood) != n_rows:
                raise DataError(f"is_ood has length {len(is_ood)}, expected {n_rows}")
            is_ood.setflags(write=False)

        features.setflags(write=False)
        labels.setflags(write=False)
        object.__setattr__(self, 'features', features)
        object.__setattr__(self, 'labels', labels)
        object.__setattr__(self, 'feature_names', names)
        object.__setattr__(self, 'is_ood', is_ood)

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def subset(self, indices: Sequence[int]) -> 'Dataset':
        """Rows at `indices` (duplicates allowed), keeping every per-row field aligned."""
        idx = np.asarray(indices, dtype=np.int64)
        return replace(
            self,
            features=self.features[idx],
            labels=self.labels[idx],
            is_ood=None if self.is_ood is None else self.is_ood[idx],
        )

    def with_features(self, features: np.ndarray, feature_names: Optional[Sequence[str]] = None) -> 'Dataset':
        return replace(
            self,
            features=features,
            feature_names=tuple(feature_names) if feature_names is not None else self.feature_names,
        )

    def to_frame(self, label_column: str = 'label') -> pd.DataFrame:
        frame = pd.DataFrame(self.features, columns=list(self.feature_names))
        frame[label_column] = self.labels
        if self.is_ood is not None:
            frame['is_ood'] = self.is_ood.astype(int)
        return frame

    @classmethod
    def concat(cls, datasets: Sequence['Dataset']) -> 'Dataset':
        """Stack datasets row-wise. All parts must share width and class count."""
        if not datasets:
            raise EmptyDatasetError("Nothing to concatenate")
        first = datasets[0]
        for other in datasets[1:]:
            if other.feature_names != first.feature_names or other.class_count != first.class_count:
                raise DataError("Cannot concatenate datasets with different schemas")
        flags = None
        if all(d.is_ood is not None for d in datasets):
            flags = np.concatenate([d.is_ood for d in datasets])
        return cls(
            features=np.vstack([d.features for d in datasets]),
            labels=np.concatenate([d.labels for d in datasets]),
            class_count=first.class_count,
            feature_names=first.feature_names,
            is_ood=flags,
            seed=first.seed,
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    stratified: bool = True
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}",
                              field='train_fraction')


@dataclass(frozen=True)
class GmmShiftParams:
    """
    Geometry of the distribution-shift fixture. Components A0 (label 0) and
    A1 (label 1) are in-distribution; B only appears at test time.
    """
    mean_a0: Tuple[float, float] = (-2.0, 0.0)
    mean_a1: Tuple[float, float] = (2.0, 0.0)
    mean_b: Tuple[float, float] = (4.0, -4.0)
    scale: float = 1.0
    test_mix: Tuple[float, float, float] = (2.0, 1.0, 1.0)
    ood_label: Optional[int] = None

    def __post_init__(self):
        if self.scale <= 0:
            raise ConfigError(f"scale must be positive, got {self.scale}", field='scale')
        if len(self.test_mix) != 3 or min(self.test_mix) < 0 or sum(self.test_mix) <= 0:
            raise ConfigError(f"test_mix must hold three non-negative weights, got {self.test_mix}",
                              field='test_mix')
        if self.ood_label is not None and self.ood_label not in (0, 1):
            raise ConfigError(f"ood_label must be 0 or 1, got {self.ood_label}", field='ood_label')

    def b_label(self) -> int:
        """Label of component B: the override, else the nearest in-distribution mean."""
        if self.ood_label is not None:
            return self.ood_label
        b = np.asarray(self.mean_b)
        d0 = np.linalg.norm(b - np.asarray(self.mean_a0))
        d1 = np.linalg.norm(b - np.asarray(self.mean_a1))
        return 0 if d0 <= d1 else 1


# ------------------------------------------------------------------------
# Synthetic Failure Scenarios
# ------------------------------------------------------------------------

def _check_generator_args(n: int, noise_sd: float) -> None:
    if n < 4 or n % 2 != 0:
        raise ConfigError(f"n must be an even count of at least 4, got {n}", field='n')
    if noise_sd < 0:
        raise ConfigError(f"noise_sd must be non-negative, got {noise_sd}", field='noise_sd')


def gen_circles(n: int, noise_sd: float, seed: int) -> Dataset:
    """
    Two concentric circles: label 0 on the unit circle, label 1 on the circle
    of radius 0.5. Angles are drawn uniformly, then Gaussian noise is added.

    Args:
        n: Total number of points (even, >= 4); half go to each class.
        noise_sd: Standard deviation of the isotropic coordinate noise.
        seed: Seed for the angle and noise draws.

    Returns:
        Dataset: Binary dataset with the outer circle first.
    """
    _check_generator_args(n, noise_sd)
    rng = np.random.default_rng(seed)
    half = n // 2
    angles = rng.uniform(0.0, 2.0 * np.pi, size=n)
    radii = np.concatenate([np.full(half, 1.0), np.full(half, 0.5)])
    points = np.column_stack([radii * np.cos(angles), radii * np.sin(angles)])
    points = points + rng.normal(0.0, noise_sd, size=points.shape)
    labels = np.concatenate([np.zeros(half, dtype=int), np.ones(half, dtype=int)])
    return Dataset(points, labels, 2, ('x0', 'x1'), seed=seed)


def gen_moons(n: int, noise_sd: float, seed: int) -> Dataset:
    """
    Two interleaving half circles. The upper arc is (cos t, sin t) with label 0;
    the lower arc is (1 - cos t, 0.5 - sin t) with label 1, for t evenly spaced
    over [0, pi]. Only the noise depends on `seed`, so the noiseless layout is
    shared by every seed and noise level.
    """
    _check_generator_args(n, noise_sd)
    rng = np.random.default_rng(seed)
    half = n // 2
    t = np.linspace(0.0, np.pi, half)
    upper = np.column_stack([np.cos(t), np.sin(t)])
    lower = np.column_stack([1.0 - np.cos(t), 0.5 - np.sin(t)])
    points = np.vstack([upper, lower])
    points = points + rng.normal(0.0, noise_sd, size=points.shape)
    labels = np.concatenate([np.zeros(half, dtype=int), np.ones(half, dtype=int)])
    return Dataset(points, labels, 2, ('x0', 'x1'), seed=seed)


def _mix_counts(n: int, weights: Sequence[float]) -> Tuple[int, int, int]:
    total = float(sum(weights))
    n_a1 = int(math.floor(n * weights[1] / total))
    n_b = int(math.floor(n * weights[2] / total))
    return n - n_a1 - n_b, n_a1, n_b


def gen_gmm_shift(
    n_train: int,
    n_test: int,
    seed: int,
    params: Optional[GmmShiftParams] = None,
) -> Tuple[Dataset, Dataset]:
    """
    Gaussian-mixture distribution shift. Training data come from A0 and A1 only
    (B's mixture weight is zero); the test set mixes A0:A1:B by `test_mix` and
    flags exactly the B points as out-of-distribution.

    Args:
        n_train: Training size (>= 4), split evenly between A0 and A1.
        n_test: Test size (>= 4).
        seed: Seed for all draws.
        params: Component geometry; defaults to GmmShiftParams().

    Returns:
        Tuple[Dataset, Dataset]: (train, test).
    """
    params = params or GmmShiftParams()
    if n_train < 4:
        raise ConfigError(f"n_train must be at least 4, got {n_train}", field='n_train')
    if n_test < 4:
        raise ConfigError(f"n_test must be at least 4, got {n_test}", field='n_test')
    rng = np.random.default_rng(seed)

    def draw(mean, count):
        return rng.normal(loc=np.asarray(mean, dtype=float), scale=params.scale, size=(count, 2))

    n0 = n_train // 2
    n1 = n_train - n0
    train_x = np.vstack([draw(params.mean_a0, n0), draw(params.mean_a1, n1)])
    train_y = np.concatenate([np.zeros(n0, dtype=int), np.ones(n1, dtype=int)])
    train = Dataset(train_x, train_y, 2, ('x0', 'x1'), is_ood=np.zeros(n_train, dtype=bool), seed=seed)

    t0, t1, tb = _mix_counts(n_test, params.test_mix)
    test_x = np.vstack([draw(params.mean_a0, t0), draw(params.mean_a1, t1), draw(params.mean_b, tb)])
    test_y = np.concatenate([
        np.zeros(t0, dtype=int), np.ones(t1, dtype=int), np.full(tb, params.b_label(), dtype=int)
    ])
    test_flags = np.concatenate([np.zeros(t0 + t1, dtype=bool), np.ones(tb, dtype=bool)])
    test = Dataset(test_x, test_y, 2, ('x0', 'x1'), is_ood=test_flags, seed=seed)
    return train, test


# ------------------------------------------------------------------------
# CSV Ingestion
# ------------------------------------------------------------------------

def _parse_labels(column: pd.Series, label_column: str,
                  class_count: Optional[int] = None) -> Tuple[np.ndarray, int]:
    empty = column == ''
    if empty.any():
        row = int(np.flatnonzero(empty.values)[0]) + 1
        raise CellParseError(f"Empty label at row {row}, column '{label_column}'", row=row, column=label_column)
    as_number = pd.to_numeric(column, errors='coerce')
    if as_number.notna().all() and (as_number == np.floor(as_number)).all():
        values = as_number.astype(np.int64).values
        # An explicit class count keeps indices that already fit it, so split files agree.
        if class_count and values.min() >= 0 and values.max() < class_count:
            return values, class_count
        uniques, labels = np.unique(values, return_inverse=True)
        if not np.array_equal(uniques, np.arange(len(uniques))):
            logging.info(f"Label values {uniques.tolist()} in '{label_column}' mapped to 0..{len(uniques) - 1}")
        return labels.astype(np.int64), max(len(uniques), 2)
    codes, uniques = pd.factorize(column, sort=False)
    logging.debug(f"Label mapping for '{label_column}': {dict(enumerate(uniques))}")
    return codes.astype(np.int64), max(len(uniques), 2)


def _parse_flags(column: pd.Series, ood_column: str, ood_value: Optional[str]) -> np.ndarray:
    if ood_value is not None:
        return (column == str(ood_value)).values
    numeric = pd.to_numeric(column, errors='coerce')
    bad = ~numeric.isin([0, 1])
    if bad.any():
        row = int(np.flatnonzero(bad.values)[0]) + 1
        raise CellParseError(
            f"Expected 0 or 1 at row {row}, column '{ood_column}', got {column.iloc[row - 1]!r}",
            row=row, column=ood_column,
        )
    return numeric.values.astype(bool)


def _encode_column(name: str, column: pd.Series) -> Tuple[np.ndarray, List[str]]:
    numeric = pd.to_numeric(column, errors='coerce')
    bad = numeric.isna().values | ~np.isfinite(numeric.fillna(0).values)
    if not bad.any():
        # to_numeric may be off by an ulp; the numpy cast is correctly rounded.
        return column.values.astype(np.float64).reshape(-1, 1), [name]
    if bad.all():
        # Categorical: one indicator per category, in order of first appearance.
        codes, uniques = pd.factorize(column, sort=False)
        return np.eye(len(uniques))[codes], [f"{name}={category}" for category in uniques]
    row = int(np.flatnonzero(bad)[0]) + 1
    raise CellParseError(
        f"Unparseable value {column.iloc[row - 1]!r} at row {row}, column '{name}'",
        row=row, column=name,
    )


def load_csv(
    path: str,
    label_column: str,
    ood_column: Optional[str] = None,
    ood_value: Optional[str] = None,
    class_count: Optional[int] = None,
) -> Dataset:
    """
    Loads a headed CSV into a Dataset.

    Numeric columns pass through; columns with no numeric cell are one-hot
    encoded in first-appearance order; a column mixing both is an error that
    names the first bad row. Integer labels are mapped to dense indices in
    ascending order (already dense labels keep their values); any other labels
    are mapped by first appearance.

    Args:
        path: CSV file path.
        label_column: Name of the label column.
        ood_column: Optional flag column, excluded from the features. Parsed as
            0/1 unless `ood_value` is given.
        ood_value: When set, rows whose `ood_column` equals it are flagged.
        class_count: Declared number of classes. Integer labels inside
            [0, class_count) are then kept as they are.

    Returns:
        Dataset: The encoded dataset.
    """
    if not os.path.exists(path):
        raise DatasetNotFoundError(f"Dataset file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise EmptyDatasetError(f"Dataset file is empty: {path}")
    if df.empty:
        raise EmptyDatasetError(f"Dataset file has no data rows: {path}")
    df = df.apply(lambda s: s.str.strip())

    for column in [label_column] + ([ood_column] if ood_column else []):
        if column not in df.columns:
            raise MissingColumnError(f"Column '{column}' not found in {path}", column=column)

    labels, inferred_classes = _parse_labels(df[label_column], label_column, class_count)
    is_ood = _parse_flags(df[ood_column], ood_column, ood_value) if ood_column else None

    blocks, names = [], []
    for name in df.columns:
        if name in (label_column, ood_column):
            continue
        block, block_names = _encode_column(name, df[name])
        blocks.append(block)
        names.extend(block_names)
    if not blocks:
        raise EmptyDatasetError(f"No feature columns in {path}")

    return Dataset(
        features=np.hstack(blocks),
        labels=labels,
        class_count=max(inferred_classes, class_count or 0),
        feature_names=tuple(names),
        is_ood=is_ood,
    )


def save_csv(d: Dataset, path: str, label_column: str = 'label') -> str:
    """Writes `d` so that `load_csv(path, label_column, 'is_ood')` reads it back unchanged."""
    return write_frame(d.to_frame(label_column), path)


# ------------------------------------------------------------------------
# Splitting and Standardization
# ------------------------------------------------------------------------

def _round_half_up(value: float) -> int:
    return int(math.floor(value + 0.5))


def stratified_split_indices(labels: np.ndarray, spec: SplitSpec) -> Tuple[np.ndarray, np.ndarray]:
    """
    Index partition behind `stratified_split`.

    Per class the train count is floor(fraction * n_c); the rows still needed to
    reach round(fraction * N) go to the classes with the largest fractional
    parts, ties to the lower class index.
    """
    labels = np.asarray(labels)
    n = len(labels)
    rng = np.random.default_rng(spec.seed)
    if not spec.stratified:
        perm = rng.permutation(n)
        n_train = _round_half_up(spec.train_fraction * n)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])

    classes, sizes = np.unique(labels, return_counts=True)
    small = classes[sizes < 2]
    if len(small):
        raise DataError(f"Stratified split needs at least 2 members per class; class {small[0]} has fewer")
    quotas = spec.train_fraction * sizes
    counts = np.floor(quotas).astype(int)
    remaining = _round_half_up(spec.train_fraction * n) - int(counts.sum())
    remaining = min(max(remaining, 0), len(classes))
    by_remainder = sorted(range(len(classes)), key=lambda i: (-(quotas[i] - counts[i]), classes[i]))
    for i in by_remainder[:remaining]:
        counts[i] += 1

    train_parts, test_parts = [], []
    for cls, count in zip(classes, counts):
        members = rng.permutation(np.flatnonzero(labels == cls))
        train_parts.append(members[:count])
        test_parts.append(members[count:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(test_parts))


def stratified_split(d: Dataset, spec: SplitSpec) -> Tuple[Dataset, Dataset]:
    train_idx, test_idx = stratified_split_indices(d.labels, spec)
    return d.subset(train_idx), d.subset(test_idx)


def shift_split(d: Dataset, spec: SplitSpec, balance: bool = True) -> Tuple[Dataset, Dataset]:
    """
    Group-shift split. Rows flagged in `d.is_ood` never reach training; the
    remaining rows are split by `spec`, and the test set receives the held-out
    in-group rows plus the flagged rows. With `balance`, the larger side of the
    test set is subsampled so in- and out-of-distribution counts match.
    """
    if d.is_ood is None:
        raise DataError("shift_split needs a dataset with is_ood flags")
    in_rows = np.flatnonzero(~d.is_ood)
    out_rows = np.flatnonzero(d.is_ood)
    if len(in_rows) == 0 or len(out_rows) == 0:
        raise DataError("shift_split needs both flagged and unflagged rows")
    train_local, test_local = stratified_split_indices(d.labels[in_rows], spec)
    test_in = in_rows[test_local]

    if balance:
        rng = np.random.default_rng([spec.seed, 1])
        size = min(len(test_in), len(out_rows))
        test_in = np.sort(rng.choice(test_in, size=size, replace=False))
        out_rows = np.sort(rng.choice(out_rows, size=size, replace=False))

    return d.subset(in_rows[train_local]), d.subset(np.concatenate([test_in, out_rows]))


@dataclass(frozen=True, eq=False)
class Standardizer:
    """Per-feature affine map fitted on training data only."""
    means: np.ndarray
    scales: np.ndarray

    def transform_features(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.means) / self.scales

    def transform(self, d: Dataset) -> Dataset:
        if d.n_features != len(self.means):
            raise DataError(f"Standardizer fitted on {len(self.means)} features, dataset has {d.n_features}")
        return d.with_features(self.transform_features(d.features))

    def to_dict(self) -> dict:
        return {'means': self.means.tolist(), 'scales': self.scales.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> 'Standardizer':
        return cls(np.asarray(doc['means'], dtype=float), np.asarray(doc['scales'], dtype=float))


def fit_standardizer(train: Dataset) -> Standardizer:
    if train.n_samples == 0:
        raise EmptyDatasetError("Cannot standardize an empty training set")
    means = train.features.mean(axis=0)
    sds = train.features.std(axis=0)
    # Constant features are only centered.
    scales = np.where(sds > ZERO_SCALE_TOLERANCE * np.maximum(1.0, np.abs(means)), sds, 1.0)
    return Standardizer(means, scales)


def standardize(train: Dataset, others: Sequence[Dataset] = ()) -> Tuple[Dataset, List[Dataset]]:
    """
    Standardizes `train` to mean 0 / population sd 1 per feature and applies
    the same transform to every dataset in `others`.
    """
    scaler = fit_standardizer(train)
    return scaler.transform(train), [scaler.transform(d) for d in others]
