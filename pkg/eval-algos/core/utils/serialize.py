import json
import os
import tempfile
from contextlib import contextmanager
from typing import Any, Dict, Iterator, Optional

import numpy as np
import pandas as pd

from .errors import DataError, DatasetNotFoundError


CSV_FLOAT_FORMAT = '%.17g'
DOCUMENT_VERSION = 1


def _to_builtin(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def clean_json(obj: Any) -> str:
    """
    Deterministic JSON text: sorted keys, two-space indent, numpy values
    converted to builtins. Floats use repr, so they round-trip exactly.
    """
    return json.dumps(obj, indent=2, sort_keys=True, default=_to_builtin, allow_nan=True) + '\n'


@contextmanager
def atomic_write(path: str, mode: str = 'w') -> Iterator[Any]:
    """
    Writes to a temporary file next to `path` and renames it into place, so a
    reader never sees a half-written file. The temporary file is removed if
    the block raises.
    """
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(prefix='.tmp-', dir=directory)
    try:
        with os.fdopen(fd, mode) as handle:
            yield handle
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_json(obj: Any, path: str) -> str:
    with atomic_write(path) as handle:
        handle.write(clean_json(obj))
    return path


def read_json(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise DatasetNotFoundError(f"File not found: {path}")
    with open(path, 'r') as handle:
        try:
            return json.load(handle)
        except json.JSONDecodeError as e:
            raise DataError(f"Invalid JSON in {path}: {e}")


def write_frame(df: pd.DataFrame, path: str) -> str:
    """CSV with 17 significant digits, no index."""
    with atomic_write(path) as handle:
        df.to_csv(handle, index=False, float_format=CSV_FLOAT_FORMAT)
    return path


def read_frame(path: str) -> pd.DataFrame:
    if not os.path.exists(path):
        raise DatasetNotFoundError(f"File not found: {path}")
    return pd.read_csv(path, float_precision='round_trip')


def save_model_document(model: Any, path: str, standardizer: Optional[Any] = None) -> str:
    """
    Persists anything with a `to_dict()` together with the feature
    standardizer it was trained behind.
    """
    return write_json({
        'version': DOCUMENT_VERSION,
        'model': model.to_dict(),
        'standardizer': None if standardizer is None else standardizer.to_dict(),
    }, path)


def load_model_document(path: str) -> Dict[str, Any]:
    doc = read_json(path)
    if doc.get('version') != DOCUMENT_VERSION or 'model' not in doc:
        raise DataError(f"Unsupported model document in {path} (version {doc.get('version')})")
    return doc
