import glob
import logging
import numbers
import os
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd

from .errors import DataError
from .serialize import read_json, write_frame, write_json


def _is_number(value: Any) -> bool:
    return isinstance(value, numbers.Real) and not isinstance(value, bool)


def _merge(values: List[Any]) -> Any:
    present = [v for v in values if v is not None]
    if not present:
        return None
    first = present[0]
    if isinstance(first, dict):
        keys = list(dict.fromkeys(k for v in present for k in v))
        return {key: _merge([v.get(key) for v in present]) for key in keys}
    if all(_is_number(v) for v in present):
        array = np.asarray(present, dtype=float)
        return {
            'mean': float(array.mean()),
            'sd': float(array.std(ddof=1)) if len(array) > 1 else 0.0,
            'values': [float(v) for v in array],
        }
    if all(isinstance(v, list) and v and all(_is_number(x) for x in v) for v in present) \
            and len({len(v) for v in present}) == 1:
        array = np.asarray(present, dtype=float)
        return {
            'mean': array.mean(axis=0).tolist(),
            'sd': (array.std(axis=0, ddof=1) if len(array) > 1 else np.zeros(array.shape[1])).tolist(),
        }
    return first if all(v == first for v in present) else present


def consolidate_metrics(metrics_list: List[Dict[str, Any]]) -> Dict[str, Any]:
    """
    Aggregates per-repeat metrics documents.

    Every numeric leaf becomes {'mean', 'sd', 'values'} (sample sd, 0 for a
    single repeat); equal-length numeric lists are averaged elementwise;
    undefined (None) entries are skipped.

    Args:
        metrics_list: One metrics dictionary per repeat.

    Returns:
        Dict[str, Any]: The consolidated document.
    """
    if not metrics_list:
        raise DataError("No metrics to consolidate")
    consolidated = _merge(metrics_list)
    consolidated['repeats'] = len(metrics_list)
    return consolidated


def flatten_metrics(consolidated: Dict[str, Any], prefix: str = '') -> pd.DataFrame:
    """One row per scalar metric: metric (dotted path), mean, sd."""
    rows = []

    def walk(node: Any, path: str) -> None:
        if isinstance(node, dict):
            if 'mean' in node and 'sd' in node and _is_number(node['mean']):
                rows.append({'metric': path, 'mean': node['mean'], 'sd': node['sd']})
                return
            for key, value in node.items():
                walk(value, f'{path}.{key}' if path else str(key))

    walk(consolidated, prefix)
    return pd.DataFrame(rows, columns=['metric', 'mean', 'sd'])


def find_repeat_metrics(output_dir: str) -> List[str]:
    """metrics.json of every repeat_<r> directory, in repeat order."""
    files = glob.glob(os.path.join(output_dir, 'repeat_*', 'metrics.json'))
    return sorted(files, key=lambda f: int(os.path.basename(os.path.dirname(f)).split('_')[-1]))


def consolidate_run(output_dir: str, metrics_path: Optional[str] = None,
                    summary_path: Optional[str] = None) -> Dict[str, Any]:
    """
    Consolidates the repeats found under `output_dir` and writes metrics.json
    and metrics_summary.csv next to them.
    """
    files = find_repeat_metrics(output_dir)
    if not files:
        raise DataError(f"No repeat_*/metrics.json found in {output_dir}")
    consolidated = consolidate_metrics([read_json(f) for f in files])
    metrics_path = metrics_path or os.path.join(output_dir, 'metrics.json')
    summary_path = summary_path or os.path.join(output_dir, 'metrics_summary.csv')
    write_json(consolidated, metrics_path)
    write_frame(flatten_metrics(consolidated), summary_path)
    logging.info(f"Consolidated {len(files)} repeats into {metrics_path}")
    return consolidated
