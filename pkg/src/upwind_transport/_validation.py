"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import math
import numbers

import numpy as np
from sklearn.utils.validation import check_array


def check_positive(name: str, value, integer: bool = False):
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        raise TypeError(f"{name} must be {'an integer' if integer else 'a number'}, got {value!r}")
    if not value > 0 or (not integer and not math.isfinite(value)):
        raise ValueError(f"{name} must be positive and finite, got {value!r}")
    return value


def check_power_of_two(name: str, h: float) -> int:
    """Return ``k`` with ``h = 2^-k``; raises otherwise."""
    check_positive(name, h)
    k = -math.log2(h)
    if abs(k - round(k)) > 1e-12:
        raise ValueError(f"{name}={h!r} is not a power of two")
    return int(round(k))


def parse_power(text: str) -> int:
    """Mesh exponent from ``"8"``, ``"-8"``, ``"2^-8"`` or ``"0.00390625"``; returns ``k`` for ``2^-k``."""
    s = str(text).strip().replace(" ", "")
    if s.startswith("2^"):
        s = s[2:]
    try:
        return abs(int(s))
    except ValueError:
        return check_power_of_two("h", float(s))


def check_cell_data(X, num_cells: int) -> np.ndarray:
    """2-D float array with one row per sample and one column per cell."""
    X = check_array(X, dtype=np.float64, ensure_2d=True, ensure_all_finite=True)
    if X.shape[1] != num_cells:
        raise ValueError(f"expected {num_cells} columns (one per cell), got {X.shape[1]}")
    return X
