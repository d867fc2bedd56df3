import logging
from typing import Optional, Tuple

import numpy as np
import pandas as pd

from ..models.advisor import AdvisorModel, decompose
from ..models.bbox import BlackBoxModel
from .datagen import Standardizer
from .errors import ConfigError, DimensionMismatchError
from .serialize import atomic_write, write_frame


GRID_KINDS = ('bbox_proba', 'error_prob', 'total', 'aleatoric', 'epistemic', 'risk')
BOUNDS_PADDING = 0.2
SVG_HASH_SALT = 'risk-advisor'

Bounds = Tuple[float, float, float, float]


def default_bounds(features: np.ndarray, padding: float = BOUNDS_PADDING) -> Bounds:
    """Bounding box of 2-D `features`, widened by `padding` of the span on every side."""
    x = np.asarray(features, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2:
        raise DimensionMismatchError(f"Grids need 2-D data, got {x.shape[1] if x.ndim == 2 else x.ndim} features")
    lows, highs = x.min(axis=0), x.max(axis=0)
    spans = np.where(highs > lows, highs - lows, 1.0)
    lows, highs = lows - padding * spans, highs + padding * spans
    return float(lows[0]), float(highs[0]), float(lows[1]), float(highs[1])


def lattice(bounds: Bounds, resolution: int) -> np.ndarray:
    """resolution x resolution points; x varies fastest."""
    if resolution < 1:
        raise ConfigError(f"resolution must be at least 1, got {resolution}", field='resolution')
    xmin, xmax, ymin, ymax = bounds
    if xmax < xmin or ymax < ymin:
        raise ConfigError(f"Invalid grid bounds {bounds}", field='bounds')
    xs, ys = np.meshgrid(np.linspace(xmin, xmax, resolution), np.linspace(ymin, ymax, resolution))
    return np.column_stack([xs.ravel(), ys.ravel()])


def emit_grid(
    model_kind: str,
    bbox: Optional[BlackBoxModel],
    advisor: Optional[AdvisorModel],
    bounds: Bounds,
    resolution: int,
    standardizer: Optional[Standardizer] = None,
) -> pd.DataFrame:
    """
    Evaluates one quantity over a regular lattice.

    Lattice coordinates are in the original feature space; `standardizer`, when
    given, maps them into the space the models were trained in. bbox_proba is
    P(class 1) for binary models and the top-class probability otherwise; the
    other kinds come from the advisor decomposition ('risk' is the risk score).

    Args:
        model_kind: One of GRID_KINDS.
        bbox: Black box; required for bbox_proba and include_prediction advisors.
        advisor: Advisor; required for every kind except bbox_proba.
        bounds: (xmin, xmax, ymin, ymax).
        resolution: Points per axis.
        standardizer: Optional feature transform applied before prediction.

    Returns:
        pd.DataFrame: Columns x, y, value with resolution ** 2 rows.
    """
    if model_kind not in GRID_KINDS:
        raise ConfigError(f"Grid kind must be one of {GRID_KINDS}, got '{model_kind}'", field='kind')
    points = lattice(bounds, resolution)
    features = standardizer.transform_features(points) if standardizer is not None else points
    if features.shape[1] != 2:
        raise DimensionMismatchError("Grids need 2-D data")

    if model_kind == 'bbox_proba':
        if bbox is None or not bbox.has_probabilities or bbox.kind == 'external':
            raise ConfigError("bbox_proba grids need a built-in black box", field='kind')
        _, probabilities = bbox.predict(features)
        values = probabilities[:, 1] if bbox.class_count == 2 else probabilities.max(axis=1)
    else:
        if advisor is None:
            raise ConfigError(f"'{model_kind}' grids need an advisor", field='advisor')
        predicted = None
        if advisor.include_prediction:
            if bbox is None or bbox.kind == 'external':
                raise ConfigError("This advisor needs a built-in black box to score a grid", field='bbox')
            predicted, _ = bbox.predict(features)
        report = decompose(advisor, features, predicted)
        values = report.risk_score if model_kind == 'risk' else getattr(report, model_kind)

    return pd.DataFrame({'x': points[:, 0], 'y': points[:, 1], 'value': values})


def save_grid(grid: pd.DataFrame, path: str) -> str:
    return write_frame(grid, path)


def render_svg(grid: pd.DataFrame, path: str, title: str = '') -> str:
    """Single-channel heatmap with a color bar. Output is byte-stable for equal input."""
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    resolution = int(round(np.sqrt(len(grid))))
    xs = grid['x'].values[:resolution]
    ys = grid['y'].values[::resolution]
    values = grid['value'].values.reshape(resolution, resolution)

    with matplotlib.rc_context({'svg.hashsalt': SVG_HASH_SALT}):
        fig, ax = plt.subplots(figsize=(5, 4))
        mesh = ax.pcolormesh(xs, ys, values, shading='nearest', cmap='viridis')
        fig.colorbar(mesh, ax=ax)
        ax.set_xlabel('x0')
        ax.set_ylabel('x1')
        if title:
            ax.set_title(title)
        with atomic_write(path) as handle:
            fig.savefig(handle, format='svg', metadata={'Date': None})
        plt.close(fig)
    logging.debug(f"Rendered {path}")
    return path
