from abc import ABC, abstractmethod
from dataclasses import asdict, dataclass
import logging
import math
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy.special import log_softmax, softmax

from ..utils.datagen import Dataset
from ..utils.errors import (
    CellParseError,
    ConfigError,
    DataError,
    DatasetNotFoundError,
    DimensionMismatchError,
    EmptyDatasetError,
    MissingColumnError,
    NumericError,
)


PROBA_SUM_TOLERANCE = 1e-6
BLACK_BOX_KINDS = ('logistic', 'mlp', 'external')


# ------------------------------------------------------------------------
# Dataclass Definitions
# ------------------------------------------------------------------------

@dataclass(frozen=True)
class BlackBoxConfig:
    """
    Which black-box classifier to train (or load) and its hyperparameters.

    `hidden` and `batch_size` only apply to the MLP. External models read
    their predictions from `train_predictions` / `test_predictions`.
    """
    kind: str = 'logistic'
    epochs: int = 500
    lr: float = 0.1
    l2: float = 1e-4
    hidden: Tuple[int, ...] = (32, 16)
    batch_size: int = 64
    seed: int = 0
    train_predictions: Optional[str] = None
    test_predictions: Optional[str] = None

    def __post_init__(self):
        if self.kind not in BLACK_BOX_KINDS:
            raise ConfigError(f"black_box.kind must be one of {BLACK_BOX_KINDS}, got '{self.kind}'",
                              field='kind')
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}", field='epochs')
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}", field='lr')
        if self.l2 < 0:
            raise ConfigError(f"l2 must be non-negative, got {self.l2}", field='l2')
        if not self.hidden or min(self.hidden) < 1:
            raise ConfigError(f"hidden must list positive layer widths, got {self.hidden}", field='hidden')
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}", field='batch_size')
        if self.kind == 'external' and not (self.train_predictions and self.test_predictions):
            raise ConfigError("External black boxes need train_predictions and test_predictions",
                              field='train_predictions')
        object.__setattr__(self, 'hidden', tuple(int(h) for h in self.hidden))

    @classmethod
    def from_dict(cls, config_dict: Dict[str, Any]) -> 'BlackBoxConfig':
        unknown = set(config_dict) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"Unknown black_box setting(s): {sorted(unknown)}", field=sorted(unknown)[0])
        values = dict(config_dict)
        if 'hidden' in values:
            values['hidden'] = tuple(values['hidden'])
        return cls(**values)

    def to_dict(self) -> Dict[str, Any]:
        values = asdict(self)
        values['hidden'] = list(self.hidden)
        return values


@dataclass(frozen=True, eq=False)
class ErrorIndicator:
    """z[i] is True iff the black box misclassified row i."""
    z: np.ndarray
    positive_rate: float


# ------------------------------------------------------------------------
# Black-Box Models
# ------------------------------------------------------------------------

class BlackBoxModel(ABC):
    """
    A classifier under audit. Built-in models return class probabilities;
    external models may be label-only.
    """

    kind: str = ''

    def __init__(self, class_count: int, n_features: Optional[int]):
        self.class_count = class_count
        self.n_features = n_features

    @abstractmethod
    def predict(self, features: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        """Returns (labels, probabilities or None) for each row of `features`."""

    @abstractmethod
    def to_dict(self) -> Dict[str, Any]:
        pass

    @property
    def has_probabilities(self) -> bool:
        return True

    def _check_width(self, features: np.ndarray) -> np.ndarray:
        x = np.asarray(features, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise DimensionMismatchError(
                f"{self.kind} model expects {self.n_features} features, got shape {x.shape}"
            )
        return x


class LogisticModel(BlackBoxModel):
    """Multinomial logistic regression (softmax over C classes)."""

    kind = 'logistic'

    def __init__(self, weights: np.ndarray, bias: np.ndarray):
        weights = np.asarray(weights, dtype=float)
        super().__init__(class_count=weights.shape[1], n_features=weights.shape[0])
        self.weights = weights
        self.bias = np.asarray(bias, dtype=float)

    def logits(self, features: np.ndarray) -> np.ndarray:
        return self._check_width(features) @ self.weights + self.bias

    def predict(self, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        probabilities = softmax(self.logits(features), axis=1)
        return np.argmax(probabilities, axis=1), probabilities

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'class_count': self.class_count,
            'n_features': self.n_features,
            'weights': self.weights.tolist(),
            'bias': self.bias.tolist(),
        }


class MlpModel(BlackBoxModel):
    """Fully connected ReLU network with a softmax output layer."""

    kind = 'mlp'

    def __init__(self, weights: Sequence[np.ndarray], biases: Sequence[np.ndarray]):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        super().__init__(class_count=self.weights[-1].shape[1], n_features=self.weights[0].shape[0])

    def forward(self, features: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray]:
        """Returns the per-layer activations (input first) and the output logits."""
        activations = [features]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            activations.append(np.maximum(activations[-1] @ w + b, 0.0))
        return activations, activations[-1] @ self.weights[-1] + self.biases[-1]

    def predict(self, features: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        _, logits = self.forward(self._check_width(features))
        probabilities = softmax(logits, axis=1)
        return np.argmax(probabilities, axis=1), probabilities

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'class_count': self.class_count,
            'n_features': self.n_features,
            'weights': [w.tolist() for w in self.weights],
            'biases': [b.tolist() for b in self.biases],
        }


class ExternalModel(BlackBoxModel):
    """
    Predictions produced elsewhere, replayed by row order. Only datasets with
    exactly as many rows as the prediction table can be scored.
    """

    kind = 'external'

    def __init__(self, labels: np.ndarray, probabilities: Optional[np.ndarray], class_count: int,
                 source: Optional[str] = None):
        super().__init__(class_count=class_count, n_features=None)
        self.labels = np.asarray(labels, dtype=np.int64)
        self.probabilities = None if probabilities is None else np.asarray(probabilities, dtype=float)
        self.source = source

    @property
    def has_probabilities(self) -> bool:
        return self.probabilities is not None

    def predict(self, features: np.ndarray) -> Tuple[np.ndarray, Optional[np.ndarray]]:
        n_rows = np.asarray(features).shape[0]
        if n_rows != len(self.labels):
            raise DimensionMismatchError(
                f"External predictions have {len(self.labels)} rows, dataset has {n_rows}"
            )
        return self.labels.copy(), None if self.probabilities is None else self.probabilities.copy()

    def to_dict(self) -> Dict[str, Any]:
        return {
            'kind': self.kind,
            'class_count': self.class_count,
            'source': self.source,
            'pred_label': self.labels.tolist(),
            'probabilities': None if self.probabilities is None else self.probabilities.tolist(),
        }


def model_from_dict(doc: Dict[str, Any]) -> BlackBoxModel:
    kind = doc.get('kind')
    if kind == 'logistic':
        return LogisticModel(np.asarray(doc['weights']), np.asarray(doc['bias']))
    if kind == 'mlp':
        return MlpModel([np.asarray(w) for w in doc['weights']], [np.asarray(b) for b in doc['biases']])
    if kind == 'external':
        probabilities = doc.get('probabilities')
        return ExternalModel(
            np.asarray(doc['pred_label']),
            None if probabilities is None else np.asarray(probabilities),
            int(doc['class_count']),
            source=doc.get('source'),
        )
    raise DataError(f"Unknown black-box model kind: {kind}")


# ------------------------------------------------------------------------
# Training
# ------------------------------------------------------------------------

def _check_trainable(train: Dataset) -> None:
    if train.n_samples == 0:
        raise EmptyDatasetError("Cannot train a black box on an empty dataset")


def _one_hot(labels: np.ndarray, class_count: int) -> np.ndarray:
    return np.eye(class_count)[labels]


def _cross_entropy(logits: np.ndarray, targets: np.ndarray) -> float:
    return float(-np.mean(np.sum(targets * log_softmax(logits, axis=1), axis=1)))


def train_logistic(train: Dataset, l2: float = 1e-4, epochs: int = 500, lr: float = 0.1,
                   seed: int = 0) -> LogisticModel:
    """
    Full-batch gradient descent on mean cross-entropy + l2 * ||W||^2 / 2,
    starting from zero weights. The bias is not penalized.

    Args:
        train: Training data.
        l2: Weight penalty.
        epochs: Number of full-batch steps.
        lr: Step size.
        seed: Unused by full-batch descent; kept so every trainer takes a seed.

    Returns:
        LogisticModel: The trained model.
    """
    _check_trainable(train)
    x = train.features
    targets = _one_hot(train.labels, train.class_count)
    weights = np.zeros((train.n_features, train.class_count))
    bias = np.zeros(train.class_count)

    for epoch in range(epochs):
        logits = x @ weights + bias
        loss = _cross_entropy(logits, targets) + 0.5 * l2 * float(np.sum(weights ** 2))
        if not math.isfinite(loss):
            raise NumericError(f"Logistic training loss became non-finite at epoch {epoch + 1}; lower lr")
        delta = (softmax(logits, axis=1) - targets) / x.shape[0]
        weights = weights - lr * (x.T @ delta + l2 * weights)
        bias = bias - lr * delta.sum(axis=0)

    if not (np.all(np.isfinite(weights)) and np.all(np.isfinite(bias))):
        raise NumericError("Logistic weights became non-finite; lower lr")
    logging.debug(f"Trained logistic model on {train.n_samples} rows for {epochs} epochs")
    return LogisticModel(weights, bias)


def _glorot_uniform(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def train_mlp(train: Dataset, hidden: Sequence[int] = (32, 16), epochs: int = 500, lr: float = 0.1,
              seed: int = 0, batch_size: int = 64, l2: float = 0.0) -> MlpModel:
    """
    Mini-batch gradient descent on softmax cross-entropy for a ReLU network.
    Initialization and batch order are both drawn from `seed`.
    """
    _check_trainable(train)
    if not hidden:
        raise ConfigError("train_mlp needs at least one hidden layer", field='hidden')
    rng = np.random.default_rng(seed)
    sizes = [train.n_features] + [int(h) for h in hidden] + [train.class_count]
    weights = [_glorot_uniform(rng, fan_in, fan_out) for fan_in, fan_out in zip(sizes[:-1], sizes[1:])]
    biases = [np.zeros(fan_out) for fan_out in sizes[1:]]
    model = MlpModel(weights, biases)

    x = train.features
    targets = _one_hot(train.labels, train.class_count)
    n_rows = x.shape[0]

    for epoch in range(epochs):
        order = rng.permutation(n_rows)
        epoch_loss = 0.0
        for start in range(0, n_rows, batch_size):
            batch = order[start:start + batch_size]
            activations, logits = model.forward(x[batch])
            epoch_loss += _cross_entropy(logits, targets[batch]) * len(batch)

            delta = (softmax(logits, axis=1) - targets[batch]) / len(batch)
            for layer in range(len(model.weights) - 1, -1, -1):
                grad_w = activations[layer].T @ delta + l2 * model.weights[layer]
                grad_b = delta.sum(axis=0)
                if layer > 0:
                    delta = (delta @ model.weights[layer].T) * (activations[layer] > 0)
                model.weights[layer] = model.weights[layer] - lr * grad_w
                model.biases[layer] = model.biases[layer] - lr * grad_b

        if not math.isfinite(epoch_loss):
            raise NumericError(f"MLP training loss became non-finite at epoch {epoch + 1}; lower lr")
        if (epoch + 1) % 100 == 0:
            logging.debug(f"mlp epoch {epoch + 1}: loss {epoch_loss / n_rows:.6f}")

    return model


def train_black_box(train: Dataset, config: BlackBoxConfig) -> BlackBoxModel:
    """Dispatches on `config.kind`; external models load their training-set predictions."""
    if config.kind == 'logistic':
        return train_logistic(train, l2=config.l2, epochs=config.epochs, lr=config.lr, seed=config.seed)
    if config.kind == 'mlp':
        return train_mlp(train, hidden=config.hidden, epochs=config.epochs, lr=config.lr,
                         seed=config.seed, batch_size=config.batch_size, l2=config.l2)
    return load_external_predictions(config.train_predictions, train.class_count)


# ------------------------------------------------------------------------
# Prediction
# ------------------------------------------------------------------------

def predict(m: BlackBoxModel, d: Dataset) -> Tuple[np.ndarray, Optional[np.ndarray]]:
    return m.predict(d.features)


def error_indicator(labels_true: Sequence[int], labels_pred: Sequence[int]) -> ErrorIndicator:
    truth = np.asarray(labels_true).reshape(-1)
    predicted = np.asarray(labels_pred).reshape(-1)
    if len(truth) != len(predicted):
        raise DimensionMismatchError(f"Got {len(truth)} true labels and {len(predicted)} predictions")
    z = truth != predicted
    return ErrorIndicator(z=z, positive_rate=float(z.mean()) if len(z) else 0.0)


def load_external_predictions(path: str, class_count: int) -> ExternalModel:
    """
    Reads a predictions file with a `pred_label` column and, optionally,
    `proba_0` .. `proba_{C-1}`. Probability rows must sum to 1 within 1e-6.
    """
    if not os.path.exists(path):
        raise DatasetNotFoundError(f"Predictions file not found: {path}")
    try:
        df = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise EmptyDatasetError(f"Predictions file is empty: {path}")
    if 'pred_label' not in df.columns:
        raise MissingColumnError(f"Column 'pred_label' not found in {path}", column='pred_label')
    if df.empty:
        raise EmptyDatasetError(f"Predictions file has no data rows: {path}")

    labels = pd.to_numeric(df['pred_label'], errors='coerce')
    bad = labels.isna() | (labels != np.floor(labels))
    if bad.any():
        row = int(np.flatnonzero(bad.values)[0]) + 1
        raise CellParseError(f"Unparseable pred_label at row {row}", row=row, column='pred_label')
    labels = labels.astype(np.int64).values
    out_of_range = (labels < 0) | (labels >= class_count)
    if out_of_range.any():
        row = int(np.flatnonzero(out_of_range)[0]) + 1
        raise DataError(f"pred_label {labels[row - 1]} at row {row} is outside [0, {class_count})",
                        row=row, column='pred_label')

    proba_columns = [f'proba_{c}' for c in range(class_count)]
    present = [column for column in df.columns if str(column).startswith('proba_')]
    probabilities = None
    if present:
        missing = [column for column in proba_columns if column not in df.columns]
        if missing:
            raise MissingColumnError(f"Column '{missing[0]}' not found in {path}", column=missing[0])
        probabilities = df[proba_columns].apply(pd.to_numeric, errors='coerce').values
        if np.isnan(probabilities).any():
            row, col = np.argwhere(np.isnan(probabilities))[0]
            raise CellParseError(f"Unparseable probability at row {row + 1}, column '{proba_columns[col]}'",
                                 row=int(row) + 1, column=proba_columns[col])
        sums = probabilities.sum(axis=1)
        off = np.abs(sums - 1.0) > PROBA_SUM_TOLERANCE
        if off.any():
            row = int(np.flatnonzero(off)[0]) + 1
            raise DataError(f"Probabilities at row {row} sum to {sums[row - 1]:.6g}, expected 1", row=row)

    logging.info(f"Loaded {len(labels)} external predictions from {path}")
    return ExternalModel(labels, probabilities, class_count, source=path)
