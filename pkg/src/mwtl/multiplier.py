"""
Fourier multipliers on the torus grid: symbols, Hormander shell constants,
spectral application and weighted boundedness reports.

Frequencies are ``xi = 2 pi k`` for integer ``k``, so ``e^{2 pi i k.x}`` is an
eigenfunction with eigenvalue ``m(2 pi k)``.  Symbols are set to zero at ``k = 0``.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import numbers
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Callable

import numpy as np
import sympy as sp
from scipy.special import comb
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_corpus, check_field
from .grid import SampledField, TorusGrid, convolve_symbol
from .littlewood_paley import AnalysisProfile
from .norms import SpaceParams, norm_F
from .weights import MatrixWeightField

SYMBOL_KINDS = ("identity", "riesz", "power", "custom")
FD_MAX_ORDER = 3
FD_STEP = 1e-3


def multi_indices(n: int, ell: int) -> list[tuple[int, ...]]:
    """All ``sigma`` in ``N^n`` with ``|sigma| <= ell``, by total order then lexicographically."""
    out = [s for s in itertools.product(range(ell + 1), repeat=n) if sum(s) <= ell]
    return sorted(out, key=lambda s: (sum(s), tuple(-c for c in s)))


@lru_cache(maxsize=None)
def _builtin_expr(kind: str, s: float, d: int, n: int):
    x = sp.symbols(f"x1:{n + 1}")
    r2 = sum(v ** 2 for v in x)
    if kind == "identity":
        return x, sp.Integer(1)
    if kind == "riesz":
        if d > n:
            raise ValueError(f"riesz direction {d} exceeds dimension {n}")
        return x, -sp.I * x[d - 1] / sp.sqrt(r2)
    return x, r2 ** (-sp.Rational(repr(s)) / 2)


@lru_cache(maxsize=None)
def _builtin_derivative(kind: str, s: float, d: int, sigma: tuple[int, ...]):
    x, e = _builtin_expr(kind, s, d, len(sigma))
    for i, k in enumerate(sigma):
        if k:
            e = sp.diff(e, x[i], k)
    f = sp.lambdify(x, e, "numpy")
    return lambda xi: np.broadcast_to(
        np.asarray(f(*np.moveaxis(xi, -1, 0)), dtype=complex), xi.shape[:-1])


@dataclass(frozen=True, eq=False)
class MultiplierSymbol:
    """A multiplier ``m(xi)`` of order ``s`` with ``ell`` controlled derivatives.

    Parameters
    ----------
    kind : {"identity", "riesz", "power", "custom"}
        ``riesz`` is ``-i xi_d / |xi|`` (``d`` from ``params``, 1-based); ``power``
        is ``|xi|^{-s}``; ``custom`` evaluates ``func``.
    s : float
        Order: the symbol is expected to gain ``s`` derivatives.
    ell : int
        Number of derivatives entering the Hormander constants.
    params : dict
    func : callable, optional
        For ``custom``: maps ``xi`` of shape ``(..., n)`` to complex values.

    Examples
    --------
    >>> sym = MultiplierSymbol.power(1.0)
    >>> float(sym(np.array([[2 * np.pi]]))[0].real)
    0.15915494309189535
    """

    kind: str = "identity"
    s: float = 0.0
    ell: int = 2
    params: dict = field(default_factory=dict)
    func: Callable | None = None

    def __post_init__(self):
        if self.kind not in SYMBOL_KINDS:
            raise ValueError(f"unknown symbol kind {self.kind!r}; expected one of {SYMBOL_KINDS}")
        if not isinstance(self.ell, numbers.Integral) or self.ell < 1:
            raise ValueError(f"ell must be an integer >= 1, got {self.ell!r}")
        if not math.isfinite(self.s):
            raise ValueError("order s must be finite")
        if self.kind == "custom":
            if self.func is None:
                raise ValueError("custom symbol needs func")
            if self.ell > FD_MAX_ORDER:
                raise ValueError(f"custom symbols support ell <= {FD_MAX_ORDER} (finite differences)")
        if self.kind == "riesz":
            d = self.params.get("d")
            if not isinstance(d, numbers.Integral) or d < 1:
                raise ValueError("riesz symbol needs an integer direction d >= 1")
        if self.kind == "identity" and self.s != 0:
            raise ValueError("identity symbol has order 0")

    # -- constructors ---------------------------------------------------------
    @classmethod
    def identity(cls, ell: int = 2) -> "MultiplierSymbol":
        return cls("identity", 0.0, ell)

    @classmethod
    def riesz(cls, d: int = 1, ell: int = 2) -> "MultiplierSymbol":
        return cls("riesz", 0.0, ell, {"d": int(d)})

    @classmethod
    def power(cls, s: float, ell: int = 2) -> "MultiplierSymbol":
        return cls("power", float(s), ell)

    @classmethod
    def custom(cls, func: Callable, s: float = 0.0, ell: int = 2, **params) -> "MultiplierSymbol":
        return cls("custom", float(s), ell, dict(params), func)

    def compose(self, other: "MultiplierSymbol") -> "MultiplierSymbol":
        """Symbol of ``T_other o T_self``: the pointwise product."""
        return MultiplierSymbol.custom(lambda xi: self(xi) * other(xi), self.s + other.s,
                                       min(self.ell, other.ell, FD_MAX_ORDER))

    # -- evaluation -----------------------------------------------------------
    def _derivative_fn(self, sigma: tuple[int, ...]):
        return _builtin_derivative(self.kind, self.s, self.params.get("d", 0), sigma)

    def __call__(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if self.kind == "custom":
            return np.asarray(self.func(xi), dtype=complex)
        return self._derivative_fn((0,) * xi.shape[-1])(xi)

    def derivative(self, sigma, xi, h=None) -> np.ndarray:
        """``d^sigma m`` at nonzero ``xi``; analytic for builtins, central differences otherwise.

        ``h`` is the finite-difference step, by default ``1e-3 |xi|``.
        """
        sigma = tuple(int(c) for c in sigma)
        xi = np.asarray(xi, dtype=float)
        if len(sigma) != xi.shape[-1]:
            raise ValueError("multi-index length must match the dimension")
        if sum(sigma) > self.ell:
            raise ValueError(f"|sigma| = {sum(sigma)} exceeds ell = {self.ell}")
        if self.kind != "custom":
            return self._derivative_fn(sigma)(xi)
        if h is None:
            h = FD_STEP * np.linalg.norm(xi, axis=-1)
        h = np.asarray(h, dtype=float)[..., None]
        out = np.zeros(xi.shape[:-1], dtype=complex)
        # tensor product of 1D central stencils: offsets (k/2 - i) h, weights (-1)^i C(k, i)
        axes = [[((k / 2 - i), (-1) ** i * comb(k, i, exact=True)) for i in range(k + 1)]
                for k in sigma]
        for combo in itertools.product(*axes):
            shift = np.array([c[0] for c in combo])
            w = math.prod(c[1] for c in combo)
            out += w * self.func(xi + shift * h)
        return out / h[..., 0] ** sum(sigma)

    def on_grid(self, grid: TorusGrid) -> np.ndarray:
        """``m(2 pi k)`` in FFT order with the zero frequency set to 0."""
        k = grid.frequencies().astype(float)
        nz = np.any(k != 0, axis=-1)
        out = np.zeros(grid.shape, dtype=complex)
        out[nz] = self(2 * np.pi * k[nz])
        if not np.all(np.isfinite(out)):
            raise ValueError("symbol is not finite on the nonzero integer frequencies")
        return out

    # -- serialization --------------------------------------------------------
    def to_json(self) -> dict:
        if self.kind == "custom":
            raise ValueError("custom symbols are not serializable")
        return {"kind": self.kind, "s": self.s, "ell": self.ell, "params": dict(self.params)}

    @classmethod
    def from_json(cls, obj) -> "MultiplierSymbol":
        if isinstance(obj, str):
            obj = json.loads(obj)
        unknown = set(obj) - {"kind", "s", "ell", "params"}
        if unknown:
            raise ValueError(f"unknown symbol fields: {sorted(unknown)}")
        kind = obj.get("kind", "identity")
        if kind == "custom":
            raise ValueError("custom symbols cannot be loaded from JSON")
        return cls(kind, float(obj.get("s", 0.0)), int(obj.get("ell", 2)),
                   dict(obj.get("params") or {}))


@dataclass
class HormanderReport:
    """Shell brackets ``R^{-n+2s+2|sigma|} sum_{R<=|k|<2R} |d^sigma m(2 pi k)|^2``.

    Shell sums run over integer frequencies ``k`` with unit cell weight;
    derivatives are taken in ``xi = 2 pi k``.  In the continuum limit the
    identity symbol gives ``(2^n - 1) vol(B_1)``.
    """

    symbol: MultiplierSymbol
    rows: list[tuple[tuple[int, ...], int, float]]
    constants: dict[tuple[int, ...], float]
    normalization: str = "integer lattice, unit cell weight, derivatives in xi = 2 pi k"

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sigma", "shell_t", "bracket", "A_sigma"])
            for sigma, t, b in self.rows:
                w.writerow([";".join(map(str, sigma)), t, repr(b), repr(self.constants[sigma])])

    def shell_values(self, sigma) -> dict[int, float]:
        sigma = tuple(sigma)
        return {t: b for s, t, b in self.rows if s == sigma}


def hormander_constants(sym: MultiplierSymbol, grid: TorusGrid, t_min: int = 0,
                        t_max: int | None = None) -> HormanderReport:
    """Shell brackets for every ``|sigma| <= ell`` and ``R = 2^t``; ``A_sigma`` is the max over shells.

    Shells run while ``2R <= N/2`` so every shell lies inside the resolved frequencies.
    """
    n = grid.n
    top = int(math.floor(math.log2(grid.N / 4)))
    t_max = top if t_max is None else min(t_max, top)
    if t_min < 0 or t_min > t_max:
        raise ValueError(f"empty shell range [{t_min}, {t_max}]")
    k = grid.frequencies().reshape(-1, n).astype(float)
    r = np.linalg.norm(k, axis=-1)
    rows = []
    consts = {}
    for sigma in multi_indices(n, sym.ell):
        best = 0.0
        for t in range(t_min, t_max + 1):
            R = 2.0 ** t
            sel = (r >= R) & (r < 2 * R)
            d = sym.derivative(sigma, 2 * np.pi * k[sel])
            b = float(R ** (-n + 2 * sym.s + 2 * sum(sigma)) * np.sum(np.abs(d) ** 2))
            rows.append((sigma, t, b))
            best = max(best, b)
        consts[sigma] = best
    return HormanderReport(sym, rows, consts)


def apply_multiplier(f, sym: MultiplierSymbol) -> SampledField:
    """``(T_m f)^ = m(2 pi k) f^(k)`` componentwise, with ``m(0) f^(0) := 0``."""
    f = check_field(f)
    return convolve_symbol(f, sym.on_grid(f.grid))


def ell_threshold(params: SpaceParams, beta: float, n: int) -> float:
    """Smoothness above which the weighted multiplier theorem applies."""
    return n / params.r + beta / params.p + n / 2


@dataclass
class BoundednessReport:
    ratios: list[float]
    ell_valid: bool
    ell_threshold: float

    @property
    def max_ratio(self) -> float:
        return max(self.ratios) if self.ratios else 0.0

    @property
    def min_ratio(self) -> float:
        return min(self.ratios) if self.ratios else 0.0

    def to_json(self) -> dict:
        return {"ratios": self.ratios, "max_ratio": self.max_ratio, "min_ratio": self.min_ratio,
                "ell_valid": self.ell_valid, "ell_threshold": self.ell_threshold}


def boundedness_report(corpus, W: MatrixWeightField, params: SpaceParams, sym: MultiplierSymbol,
                       profile: AnalysisProfile, beta: float = 0.0) -> BoundednessReport:
    """``norm_F(T_m f; alpha + s) / norm_F(f; alpha)`` per member; zero members are skipped."""
    shifted = SpaceParams(params.alpha + sym.s, params.p, params.q, params.a, params.lam)
    ratios = []
    for f in check_corpus(corpus, W.grid, W.m):
        den = norm_F(f, W, params, profile)
        if den > 0:
            ratios.append(norm_F(apply_multiplier(f, sym), W, shifted, profile) / den)
    thr = ell_threshold(params, beta, W.grid.n)
    return BoundednessReport(ratios, sym.ell > thr, thr)


class FourierMultiplier(TransformerMixin, BaseEstimator):
    """Apply a builtin multiplier to fields.

    Parameters
    ----------
    kind : {"identity", "riesz", "power"}
    s : float
        Order for ``power``.
    d : int
        Direction for ``riesz``.
    ell : int

    Attributes
    ----------
    symbol_ : MultiplierSymbol
    """

    def __init__(self, kind: str = "identity", s: float = 0.0, d: int = 1, ell: int = 2):
        self.kind = kind
        self.s = s
        self.d = d
        self.ell = ell

    def fit(self, X=None, y=None):
        params = {"d": self.d} if self.kind == "riesz" else {}
        self.symbol_ = MultiplierSymbol(self.kind, float(self.s), self.ell, params)
        return self

    def transform(self, X):
        if isinstance(X, SampledField):
            return apply_multiplier(X, self.symbol_)
        return [apply_multiplier(f, self.symbol_) for f in X]
