"""Input validation helpers shared by the estimators and pure functions."""

import numpy as np
from sklearn.utils import check_array

from .exceptions import DegenerateInputError, DimensionMismatchError, InputError


def check_vector(x, name="vector"):
    """Return ``x`` as a finite float64 1-D array."""
    try:
        arr = np.asarray(x, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{name} is not numeric: {exc}") from None
    if arr.ndim != 1 or arr.size == 0:
        raise InputError(f"{name} must be a non-empty 1-D array, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{name} contains non-finite entries")
    return arr


def check_embeddings(X, name="embeddings", dim=None, allow_empty=False):
    """Return ``X`` as a finite float64 ``(n, d)`` array.

    A single 1-D vector is promoted to one row.
    """
    arr = np.asarray(X, dtype=object if _is_ragged(X) else None)
    if arr.dtype == object:
        raise InputError(f"{name} rows have differing lengths")
    if arr.ndim == 1 and arr.size > 0:
        arr = arr[None, :]
    if arr.size == 0:
        if allow_empty:
            return np.zeros((0, dim or 0))
        raise InputError(f"{name} is empty")
    try:
        arr = check_array(arr, dtype=np.float64, ensure_all_finite=True)
    except ValueError as exc:
        raise InputError(f"{name}: {exc}") from None
    if dim is not None and arr.shape[1] != dim:
        raise DimensionMismatchError(f"{name} has dimension {arr.shape[1]}, expected {dim}")
    return arr


def check_nonzero_rows(X, name="embeddings"):
    norms = np.linalg.norm(X, axis=1)
    bad = np.flatnonzero(norms == 0.0)
    if bad.size:
        raise DegenerateInputError(f"{name} has zero vectors at rows {bad.tolist()}")
    return norms


def check_unit_interval(q, name="scores"):
    arr = np.asarray(q, dtype=np.float64)
    if arr.ndim != 1:
        raise InputError(f"{name} must be 1-D")
    if not np.all(np.isfinite(arr)) or np.any(arr < 0.0) or np.any(arr > 1.0):
        raise InputError(f"{name} must lie in [0, 1]")
    return arr


def _is_ragged(X):
    if isinstance(X, np.ndarray):
        return False
    try:
        lengths = {len(row) for row in X}
    except TypeError:
        return False
    return len(lengths) > 1
