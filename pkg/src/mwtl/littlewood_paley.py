"""
Littlewood-Paley analysis on the torus grid.

The radial profile is a smooth bump in the ``log2 |k|`` variable, supported in
``[c1, c2]`` and square-normalised over all dyadic dilations, so the same
function serves as analysis and synthesis window (``psi = phi``).
"""
from __future__ import annotations

import json
import numbers
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_field
from .grid import SampledField, TorusGrid, fft_forward, fft_inverse


def _bump(v: np.ndarray) -> np.ndarray:
    """``exp(1 - 1/(1 - v^2))`` on ``|v| < 1``, zero elsewhere; peaks at 1 for ``v = 0``."""
    v = np.asarray(v, dtype=float)
    out = np.zeros_like(v)
    inside = np.abs(v) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - v[inside] ** 2))
    return out


@dataclass(frozen=True)
class AnalysisProfile:
    """Square-normalised radial profile ``g`` and its dyadic scale window.

    Parameters
    ----------
    c1, c2 : float
        Support of ``g`` in units of grid frequency; ``c2 / c1`` must exceed 2 so
        the dilated annuli overlap.
    j_min, j_max : int
        Scales kept; ``sigma_j(k) = g(|k| / 2**j)``.
    """

    c1: float = 0.5
    c2: float = 2.0
    j_min: int = 0
    j_max: int = 4

    def __post_init__(self):
        if not (0 < self.c1 < self.c2):
            raise ValueError(f"need 0 < c1 < c2, got c1={self.c1}, c2={self.c2}")
        if self.c2 / self.c1 <= 2:
            raise ValueError("profile annuli do not cover: c2 / c1 must exceed 2")
        if not (isinstance(self.j_min, numbers.Integral) and isinstance(self.j_max, numbers.Integral)):
            raise TypeError("scale window bounds must be integers")
        if self.j_max < self.j_min:
            raise ValueError(f"invalid scale window [{self.j_min}, {self.j_max}]")

    @property
    def scales(self) -> range:
        return range(self.j_min, self.j_max + 1)

    def _raw(self, t: np.ndarray) -> np.ndarray:
        lo, hi = np.log2(self.c1), np.log2(self.c2)
        with np.errstate(divide="ignore"):
            s = np.log2(np.asarray(t, dtype=float))
        return _bump((s - 0.5 * (lo + hi)) / (0.5 * (hi - lo)))

    def g(self, t) -> np.ndarray:
        """Profile value at radius ``t >= 0``; ``sum_{j in Z} g(t / 2**j)**2 = 1`` for ``t > 0``."""
        t = np.asarray(t, dtype=float)
        raw = self._raw(t)
        total = np.zeros_like(raw)
        pos = t > 0
        lo, hi = np.log2(self.c1), np.log2(self.c2)
        s = np.log2(np.where(pos, t, 1.0))
        # dilations 2**i with c1 < t / 2**i < c2
        for i in range(int(np.floor(-hi)) - 1, int(np.ceil(-lo)) + 2):
            shifted = self._raw(np.where(pos, 2.0 ** (s + i), 0.0))
            total += shifted ** 2
        out = np.zeros_like(raw)
        ok = total > 0
        out[ok] = raw[ok] / np.sqrt(total[ok])
        return out

    def symbol(self, j: int, grid: TorusGrid) -> np.ndarray:
        """``sigma_j(k) = g(|k| / 2**j)`` in FFT order."""
        return self.g(grid.frequency_norm() / 2.0 ** j)

    def symbols(self, grid: TorusGrid) -> np.ndarray:
        """All window symbols stacked, shape ``(len(scales),) + grid.shape``."""
        t = grid.frequency_norm()
        return np.stack([self.g(t / 2.0 ** j) for j in self.scales])

    @property
    def support_range(self) -> tuple[float, float]:
        """Radii reached by some window scale: ``(c1 2**j_min, c2 2**j_max)``, open."""
        return self.c1 * 2.0 ** self.j_min, self.c2 * 2.0 ** self.j_max

    @property
    def exact_range(self) -> tuple[float, float]:
        """Closed radius range where every contributing dilation lies in the window.

        There the truncated tiling sum equals the full one, i.e. 1.
        """
        return self.c2 * 2.0 ** (self.j_min - 1), self.c1 * 2.0 ** (self.j_max + 1)

    def covered(self, t) -> np.ndarray:
        lo, hi = self.exact_range
        t = np.asarray(t, dtype=float)
        return (t >= lo * (1 - 1e-12)) & (t <= hi * (1 + 1e-12))

    def nonzero_scales(self, t: float) -> int:
        return int(sum(self.g(np.array([t / 2.0 ** j]))[0] != 0 for j in self.scales))

    def to_json(self) -> dict:
        return {"c1": self.c1, "c2": self.c2, "jmin": self.j_min, "jmax": self.j_max}

    @classmethod
    def from_json(cls, obj) -> "AnalysisProfile":
        if isinstance(obj, str):
            obj = json.loads(obj)
        missing = {"c1", "c2", "jmin", "jmax"} - set(obj)
        if missing:
            raise ValueError(f"profile JSON missing fields {sorted(missing)}")
        return cls(float(obj["c1"]), float(obj["c2"]), int(obj["jmin"]), int(obj["jmax"]))


def make_profile(c1: float = 0.5, c2: float = 2.0, window=(0, 4),
                 grid: TorusGrid | None = None) -> AnalysisProfile:
    """Build a profile and, when ``grid`` is given, check the window against Nyquist.

    The top annulus must satisfy ``c2 * 2**j_max <= N / 2``; ``g`` vanishes at
    ``c2`` so the Nyquist frequency itself carries no weight.
    """
    j_min, j_max = window
    prof = AnalysisProfile(float(c1), float(c2), int(j_min), int(j_max))
    if j_min < 0:
        raise ValueError(f"j_min must be >= 0, got {j_min}")
    if grid is not None and c2 * 2.0 ** j_max > grid.N / 2:
        raise ValueError(
            f"aliasing: c2 * 2**j_max = {c2 * 2.0 ** j_max:g} exceeds Nyquist {grid.N // 2}")
    return prof


@dataclass(frozen=True)
class AnalysisPair:
    """Analysis and synthesis profiles with ``sum_j g(t/2^j) h(t/2^j) = 1`` on covered radii."""

    phi: AnalysisProfile
    psi: AnalysisProfile

    def tiling(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return sum(self.phi.g(t / 2.0 ** j) * self.psi.g(t / 2.0 ** j) for j in self.phi.scales)

    def residual(self, grid: TorusGrid) -> tuple[float, np.ndarray]:
        """Max tiling error over covered integer frequencies, and the covered mask."""
        t = grid.frequency_norm()
        cov = self.phi.covered(t) & (t > 0)
        err = np.abs(self.tiling(t) - 1.0)
        return (float(err[cov].max()) if cov.any() else 0.0), cov


def make_pair(profile: AnalysisProfile) -> AnalysisPair:
    """Pair a square-normalised profile with itself."""
    return AnalysisPair(profile, profile)


def lp_piece(f, j: int, profile: AnalysisProfile) -> SampledField:
    """Band-pass ``f`` to the scale-``j`` annulus."""
    f = check_field(f)
    if j not in profile.scales:
        raise ValueError(f"scale {j} outside window [{profile.j_min}, {profile.j_max}]")
    coef = fft_forward(f) * profile.symbol(j, f.grid)[..., None]
    return fft_inverse(coef, f.grid)


def lp_pieces(f, profile: AnalysisProfile) -> np.ndarray:
    """Every window piece from one FFT, shape ``(scales,) + grid.shape + (m,)``."""
    f = check_field(f)
    coef = fft_forward(f)
    sym = profile.symbols(f.grid)
    return np.fft.ifftn(sym[..., None] * coef[None], axes=tuple(a + 1 for a in f.grid.axes),
                        norm="ortho")


def check_band(f: SampledField, profile: AnalysisProfile, rtol: float = 1e-10) -> None:
    """Raise unless the spectrum of ``f`` lives on exactly tiled radii."""
    coef = fft_forward(f)
    mag = np.abs(coef).max(axis=-1)
    top = mag.max()
    if top == 0:
        return
    outside = ~profile.covered(f.grid.frequency_norm())
    if np.any(mag[outside] > rtol * top):
        raise ValueError("frequency content outside window")


def calderon_check(pair: AnalysisPair, f) -> float:
    """Sup-norm relative error of ``sum_j phi_j * psi_j * f`` against ``f``."""
    f = check_field(f)
    check_band(f, pair.phi)
    coef = fft_forward(f)
    t = f.grid.frequency_norm()
    mult = pair.tiling(t)
    rec = np.fft.ifftn(coef * mult[..., None], axes=f.grid.axes, norm="ortho")
    top = np.abs(f.values).max()
    if top == 0:
        return 0.0
    return float(np.abs(rec - f.values).max() / top)


class LittlewoodPaley(TransformerMixin, BaseEstimator):
    """Split fields into dyadic frequency pieces and put them back together.

    Parameters
    ----------
    c1, c2 : float
        Profile support.
    j_min, j_max : int
        Scale window; ``j_max`` defaults to the largest alias-free scale.

    Attributes
    ----------
    profile_ : AnalysisProfile
    pair_ : AnalysisPair
    grid_ : TorusGrid

    Examples
    --------
    >>> from mwtl.grid import TorusGrid, band_limited_field
    >>> g = TorusGrid(1, 8)
    >>> f = band_limited_field(g, 1, band=(4, 32), seed=3)
    >>> lp = LittlewoodPaley(j_min=2, j_max=6).fit(f)
    >>> pieces = lp.transform(f)
    >>> pieces.shape
    (5, 256, 1)
    >>> bool(np.allclose(lp.inverse_transform(pieces).values, f.values))
    True
    """

    def __init__(self, c1: float = 0.5, c2: float = 2.0, j_min: int = 0, j_max: int | None = None):
        self.c1 = c1
        self.c2 = c2
        self.j_min = j_min
        self.j_max = j_max

    def fit(self, X, y=None):
        grid = X if isinstance(X, TorusGrid) else check_field(X).grid
        j_max = self.j_max
        if j_max is None:
            j_max = int(np.floor(np.log2(grid.N / 2 / self.c2)))
        self.profile_ = make_profile(self.c1, self.c2, (self.j_min, j_max), grid)
        self.pair_ = make_pair(self.profile_)
        self.grid_ = grid
        return self

    def transform(self, X) -> np.ndarray:
        return lp_pieces(check_field(X, self.grid_), self.profile_)

    def inverse_transform(self, pieces: np.ndarray) -> SampledField:
        pieces = np.asarray(pieces)
        axes = tuple(a + 1 for a in self.grid_.axes)
        coef = np.fft.fftn(pieces, axes=axes, norm="ortho")
        sym = self.profile_.symbols(self.grid_)
        out = np.fft.ifftn((sym[..., None] * coef).sum(axis=0), axes=self.grid_.axes, norm="ortho")
        return SampledField(self.grid_, out)
