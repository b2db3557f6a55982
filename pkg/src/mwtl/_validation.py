"""Input validation shared by the estimators and the functional API."""
from __future__ import annotations

import numbers

import numpy as np

from .grid import SampledField, TorusGrid


def check_exponent(value, name: str, low: float = 0.0, high: float = np.inf,
                   low_inclusive: bool = False, allow_inf: bool = False) -> float:
    """Validate a real parameter such as ``p``, ``q``, ``a`` or ``lambda``."""
    if not isinstance(value, numbers.Real) or isinstance(value, bool):
        raise TypeError(f"{name} must be a real number, got {type(value).__name__}")
    value = float(value)
    if np.isnan(value):
        raise ValueError(f"{name} must not be NaN")
    if np.isinf(value):
        if allow_inf and value > 0:
            return value
        raise ValueError(f"{name} must be finite, got {value}")
    ok_low = value >= low if low_inclusive else value > low
    if not ok_low or value > high:
        bracket = "[" if low_inclusive else "("
        raise ValueError(f"{name} must lie in {bracket}{low}, {high}], got {value}")
    return value


def conjugate_exponent(p: float) -> float:
    if p <= 1:
        raise ValueError(f"conjugate exponent needs p > 1, got {p}")
    return p / (p - 1.0)


def check_field(f, grid: TorusGrid | None = None, m: int | None = None) -> SampledField:
    """Accept a :class:`SampledField` or a raw array on ``grid``."""
    if isinstance(f, SampledField):
        out = f
    else:
        if grid is None:
            raise TypeError("raw arrays need an explicit grid")
        out = SampledField(grid, np.asarray(f))
    if grid is not None and out.grid != grid:
        raise ValueError(f"field lives on {out.grid}, expected {grid}")
    if m is not None and out.m != m:
        raise ValueError(f"field has {out.m} components, expected {m}")
    return out


def check_corpus(corpus, grid=None, m=None) -> list[SampledField]:
    if isinstance(corpus, SampledField):
        corpus = [corpus]
    return [check_field(f, grid, m) for f in corpus]


def check_window(grid: TorusGrid, j_min: int, j_max: int) -> tuple[int, int]:
    if not (isinstance(j_min, numbers.Integral) and isinstance(j_max, numbers.Integral)):
        raise TypeError("scale window bounds must be integers")
    if j_min < 0 or j_max < j_min:
        raise ValueError(f"invalid scale window [{j_min}, {j_max}]")
    if j_max > grid.L - 2:
        raise ValueError(f"j_max={j_max} exceeds L-2={grid.L - 2}")
    return int(j_min), int(j_max)


def check_unit_vector(y, m: int) -> np.ndarray:
    y = np.asarray(y, dtype=complex).reshape(-1)
    if y.shape != (m,):
        raise ValueError(f"direction must have {m} components, got {y.shape}")
    if abs(np.linalg.norm(y) - 1.0) > 1e-10:
        raise ValueError("direction must be a unit vector")
    return y
