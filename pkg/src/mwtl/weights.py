"""
Matrix weights on the torus and their Muckenhoupt-type characteristics.

A matrix weight is a field of Hermitian positive definite ``m x m`` matrices,
one per grid sample.  The estimators here scan dyadic cubes only, so every
reported characteristic is a lower bound for the supremum over all cubes.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc
from sklearn.base import BaseEstimator

from ._validation import check_exponent, conjugate_exponent
from .grid import DyadicCube, TorusGrid
from .matrix_core import NotPositiveDefinite, matrix_power, operator_norm

WEIGHT_KINDS = ("identity", "constant", "diagonal_power", "rotating", "scalar")

# pairwise work is chunked to keep temporaries around this many complex entries
_CHUNK = 1 << 22


@dataclass(frozen=True)
class WeightSpec:
    """Recipe for a test weight.

    ``kind`` is one of ``identity``, ``constant`` (uses ``matrix``),
    ``diagonal_power`` (``diag(dist(x, center)**a_i)``), ``rotating`` (the
    diagonal power conjugated by a rotation turning at ``rate`` turns per unit
    length along the first axis) and ``scalar`` (``dist(x, center)**a * I``).
    """

    kind: str = "identity"
    exponents: tuple[float, ...] = ()
    center: tuple[float, ...] = (0.0,)
    rate: float = 0.0
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}; expected one of {WEIGHT_KINDS}")
        object.__setattr__(self, "exponents", tuple(float(a) for a in self.exponents))
        object.__setattr__(self, "center", tuple(float(c) for c in np.atleast_1d(self.center)))
        if self.matrix is not None:
            object.__setattr__(self, "matrix", np.asarray(self.matrix))
        if self.kind == "constant" and self.matrix is None:
            raise ValueError("constant weight needs a matrix")
        if self.kind in ("diagonal_power", "rotating", "scalar") and not self.exponents:
            raise ValueError(f"{self.kind} weight needs exponents")
        if not np.all(np.isfinite(self.exponents)) or not np.isfinite(self.rate):
            raise ValueError("weight parameters must be finite")

    def admissible_for(self, p: float, n: int) -> bool:
        """Whether the power exponents sit in the classical admissible range for ``p``."""
        if self.kind in ("identity", "constant"):
            return True
        a = np.asarray(self.exponents)
        if p > 1:
            return bool(np.all((a > -n) & (a < n * (p - 1))))
        return bool(np.all((a > -n) & (a <= 0)))

    def to_json(self) -> dict:
        mat = None
        if self.matrix is not None:
            M = np.asarray(self.matrix)
            mat = M.real.tolist() if np.isrealobj(M) else {"re": M.real.tolist(), "im": M.imag.tolist()}
        return {"kind": self.kind, "exponents": list(self.exponents),
                "center": list(self.center), "rate": self.rate, "matrix": mat}

    @classmethod
    def from_json(cls, obj) -> "WeightSpec":
        if isinstance(obj, (str, Path)) and Path(obj).exists():
            obj = json.loads(Path(obj).read_text())
        unknown = set(obj) - {"kind", "exponents", "center", "rate", "matrix"}
        if unknown:
            raise ValueError(f"unknown weight spec fields: {sorted(unknown)}")
        mat = obj.get("matrix")
        if isinstance(mat, dict):
            mat = np.asarray(mat["re"]) + 1j * np.asarray(mat["im"])
        return cls(kind=obj.get("kind", "identity"),
                   exponents=tuple(obj.get("exponents") or ()),
                   center=tuple(obj.get("center") or (0.0,)),
                   rate=float(obj.get("rate") or 0.0),
                   matrix=None if mat is None else np.asarray(mat))


@dataclass(frozen=True, eq=False)
class MatrixWeightField:
    """Positive definite matrices ``W(x)``, array of shape ``grid.shape + (m, m)``.

    Fractional powers are cached per exponent.
    """

    grid: TorusGrid
    values: np.ndarray
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.shape[: self.grid.n] != self.grid.shape or v.ndim != self.grid.n + 2 or v.shape[-1] != v.shape[-2]:
            raise ValueError(f"weight array of shape {v.shape} does not fit grid {self.grid.shape}")
        v = v.copy()
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        # rejects non-PD samples up front
        self.power(1.0)

    @property
    def m(self) -> int:
        return self.values.shape[-1]

    @property
    def is_real(self) -> bool:
        return np.isrealobj(self.values) or not np.any(np.imag(self.values))

    def power(self, alpha: float) -> np.ndarray:
        key = float(alpha)
        if key not in self._cache:
            try:
                self._cache[key] = matrix_power(self.values, key)
            except NotPositiveDefinite as exc:
                raise NotPositiveDefinite(f"weight {exc}") from None
        return self._cache[key]

    def powers(self, p: float) -> tuple[np.ndarray, np.ndarray]:
        """``(W^{1/p}, W^{-1/p})``."""
        return self.power(1.0 / p), self.power(-1.0 / p)

    def scaled(self, c: float) -> "MatrixWeightField":
        return MatrixWeightField(self.grid, c * self.values)

    def conjugated(self, U: np.ndarray) -> "MatrixWeightField":
        """``U* W U`` for a constant unitary ``U``."""
        return MatrixWeightField(self.grid, np.conj(U.T) @ self.values @ U)

    def translate(self, shift) -> "MatrixWeightField":
        shift = tuple(np.broadcast_to(np.asarray(shift, dtype=int), (self.grid.n,)))
        return MatrixWeightField(self.grid, np.roll(self.values, shift, axis=self.grid.axes))


def _power_distance(grid: TorusGrid, center) -> np.ndarray:
    center = np.broadcast_to(np.asarray(center, dtype=float), (grid.n,))
    if not np.allclose(center * grid.N, np.round(center * grid.N)):
        raise ValueError(f"power-weight center {tuple(center)} is not a grid point")
    d = grid.distance_to(center)
    # the singular sample takes the value at half a grid spacing
    d[d < 0.5 * grid.spacing] = 0.5 * grid.spacing
    return d


def generate_weight(spec: WeightSpec, grid: TorusGrid, m: int) -> MatrixWeightField:
    """Sample the weight described by ``spec`` on ``grid``."""
    if m < 1:
        raise ValueError("m must be positive")
    eye = np.eye(m)
    if spec.kind == "identity":
        return MatrixWeightField(grid, np.broadcast_to(eye, grid.shape + (m, m)))
    if spec.kind == "constant":
        W0 = np.asarray(spec.matrix)
        if W0.shape != (m, m):
            raise ValueError(f"constant matrix has shape {W0.shape}, expected {(m, m)}")
        return MatrixWeightField(grid, np.broadcast_to(W0, grid.shape + (m, m)))

    a = np.asarray(spec.exponents, dtype=float)
    if np.any(a <= -grid.n):
        raise ValueError("inadmissible exponent")
    dist = _power_distance(grid, spec.center)
    if spec.kind == "scalar":
        if a.size != 1:
            raise ValueError("scalar weight takes a single exponent")
        return MatrixWeightField(grid, (dist ** a[0])[..., None, None] * eye)

    if a.size == 1:
        a = np.repeat(a, m)
    if a.size != m:
        raise ValueError(f"need {m} exponents, got {a.size}")
    diag = dist[..., None] ** a
    if spec.kind == "diagonal_power":
        W = diag[..., None, :] * eye
        return MatrixWeightField(grid, W)

    # rotating: U(x) diag(dist^a) U(x)^T with U(x) = exp(theta(x) G)
    G = np.zeros((m, m))
    for i in range(m - 1):
        G[i, i + 1], G[i + 1, i] = 1.0, -1.0
    theta = 2 * np.pi * spec.rate * grid.points()[..., 0]
    mu, V = np.linalg.eigh(1j * G)  # 1j*G is Hermitian; exp(tG) = V exp(-i t mu) V*
    phase = np.exp(-1j * theta[..., None] * mu)
    U = ((V * phase[..., None, :]) @ np.conj(V.T)).real
    W = (U * diag[..., None, :]) @ np.swapaxes(U, -1, -2)
    return MatrixWeightField(grid, 0.5 * (W + np.swapaxes(W, -1, -2)))


def random_smooth_weight(grid: TorusGrid, m: int, seed: int = 0, amplitude: float = 1.0,
                         band: int = 3, complex_: bool = True) -> MatrixWeightField:
    """``W = exp(S)`` for a seeded band-limited Hermitian field ``S`` with ``max ||S|| = amplitude``.

    Smooth and bounded above and below, so it lies in every matrix ``A_p`` class.
    """
    from .grid import band_limited_field

    entries = band_limited_field(grid, m * m, band=(1, band), seed=seed, real=not complex_)
    G = np.asarray(entries.values).reshape(grid.shape + (m, m))
    S = 0.5 * (G + np.conj(np.swapaxes(G, -1, -2)))
    if not complex_:
        S = S.real
    lam, P = np.linalg.eigh(S)
    top = np.abs(lam).max()
    lam = lam * (amplitude / top if top > 0 else 0.0)
    W = (P * np.exp(lam)[..., None, :]) @ np.conj(np.swapaxes(P, -1, -2))
    return MatrixWeightField(grid, W.real if not complex_ else W)


def direction_set(m: int, count: int = 64, seed: int = 0, complex_: bool = False) -> np.ndarray:
    """Standard basis plus ``count`` scrambled-Halton unit vectors in ``C^m``.

    A larger ``count`` with the same seed extends the smaller set.
    """
    basis = np.eye(m, dtype=complex)
    if count <= 0:
        return basis
    d = 2 * m if complex_ else m
    u = qmc.Halton(d=d, scramble=True, seed=seed).random(count)
    g = ndtri(np.clip(u, 1e-12, 1 - 1e-12))
    z = g[:, :m] + 1j * g[:, m:] if complex_ else g.astype(complex)
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return np.vstack([basis, z])


# -- A_p characteristic ------------------------------------------------------

@dataclass
class ApReport:
    """Result of a dyadic A_p scan.

    ``rows`` holds ``(level, cube_index, bracket_value)`` for every scanned cube.
    """

    p: float
    value: float
    argmax: DyadicCube
    per_level: dict[int, float]
    rows: list[tuple[int, int, float]]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "cube_index", "bracket_value"])
            for lv, idx, val in self.rows:
                w.writerow([lv, idx, repr(float(val))])


def _pair_norms(B: np.ndarray, Binv: np.ndarray) -> np.ndarray:
    """``||B[c, x] Binv[c, y]||`` for a batch of cubes, shape ``(C, S, S)``."""
    if B.shape[-1] == 1:
        return np.abs(B[..., 0, 0])[:, :, None] * np.abs(Binv[..., 0, 0])[:, None, :]
    prod = np.einsum("cxab,cybd->cxyad", B, Binv)
    return operator_norm(prod)


def _cube_chunks(C: int, S: int, m: int):
    step = max(1, _CHUNK // max(1, S * S * m * m))
    for start in range(0, C, step):
        yield slice(start, min(C, start + step))


def ap_characteristic(W: MatrixWeightField, p: float, j_min: int = 0) -> ApReport:
    """Dyadic scan of the matrix A_p bracket.

    For ``p > 1`` each cube contributes
    ``mean_x [mean_y ||W^{1/p}(x) W^{-1/p}(y)||^{p'}]^{p/p'}``; for ``p <= 1`` it
    contributes ``max_y mean_x ||W^{1/p}(x) W^{-1/p}(y)||^p``.  Cubes at levels
    ``j_min..L`` are scanned.
    """
    p = check_exponent(p, "p")
    grid = W.grid
    B, Binv = W.powers(p)
    pp = conjugate_exponent(p) if p > 1 else None
    rows: list[tuple[int, int, float]] = []
    per_level: dict[int, float] = {}
    best, best_cube = -np.inf, None
    with np.errstate(over="ignore", invalid="ignore"):
        for j in range(j_min, grid.L + 1):
            Bc = grid.cube_view(B, j)
            Ic = grid.cube_view(Binv, j)
            C, S = Bc.shape[:2]
            vals = np.empty(C)
            for sl in _cube_chunks(C, S, W.m):
                norms = _pair_norms(Bc[sl], Ic[sl])
                if pp is not None:
                    inner = (norms ** pp).mean(axis=2) ** (p / pp)
                    vals[sl] = inner.mean(axis=1)
                else:
                    vals[sl] = (norms ** p).mean(axis=1).max(axis=1)
            if not np.all(np.isfinite(vals)):
                raise FloatingPointError("overflow: weight too singular for grid")
            k = int(np.argmax(vals))
            per_level[j] = float(vals[k])
            rows.extend((j, c, float(v)) for c, v in enumerate(vals))
            if vals[k] > best:
                best, best_cube = float(vals[k]), _cube_from_flat(grid, j, k)
    return ApReport(p=p, value=best, argmax=best_cube, per_level=per_level, rows=rows)


def _cube_from_flat(grid: TorusGrid, j: int, flat: int) -> DyadicCube:
    idx = np.unravel_index(flat, (2 ** j,) * grid.n)
    return DyadicCube(j, tuple(int(i) for i in idx))


def scalar_ap_characteristic(w: np.ndarray, grid: TorusGrid, p: float, j_min: int = 0) -> float:
    """Classical A_p constant of a scalar weight over dyadic cubes at levels ``j_min..L``.

    ``p > 1`` uses ``<w>_Q <w^{1/(1-p)}>_Q^{p-1}``; ``p = 1`` uses ``<w>_Q / min_Q w``.
    """
    p = check_exponent(p, "p", low=1.0, low_inclusive=True)
    w = np.asarray(w, dtype=float)
    if w.shape != grid.shape:
        raise ValueError(f"weight shape {w.shape} does not match grid {grid.shape}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("scalar weight must be finite and nonnegative")
    if not np.any(w > 0):
        raise ValueError("scalar weight vanishes identically")
    if np.any(w == 0):
        # a zero sample is a whole cube at the finest level
        raise ValueError("degenerate weight")
    best = 0.0
    for j in range(j_min, grid.L + 1):
        cw = grid.cube_view(w, j)
        mean_w = cw.mean(axis=1)
        if p > 1:
            dual = (cw ** (1.0 / (1.0 - p))).mean(axis=1) ** (p - 1.0)
        else:
            dual = 1.0 / cw.min(axis=1)
        best = max(best, float((mean_w * dual).max()))
    return best


def scalar_reduction(W: MatrixWeightField, p: float, y) -> np.ndarray:
    """``w_y(x) = |W^{1/p}(x) y|^p`` for a unit vector ``y``."""
    from ._validation import check_unit_vector

    y = check_unit_vector(y, W.m)
    B = W.power(1.0 / p)
    return np.linalg.norm(B @ y, axis=-1) ** p


def norm_weight_field(W: MatrixWeightField, p: float) -> np.ndarray:
    """``||W^{1/p}(x)||^p``."""
    return operator_norm(W.power(1.0 / p)) ** p


def duality_check(W: MatrixWeightField, p: float, j_min: int = 0) -> tuple[float, float]:
    """A_p characteristic of ``W`` and A_{p'} characteristic of ``W^{-p'/p}``."""
    p = check_exponent(p, "p", low=1.0)
    pp = conjugate_exponent(p)
    dual = MatrixWeightField(W.grid, W.power(-pp / p))
    return (ap_characteristic(W, p, j_min).value, ap_characteristic(dual, pp, j_min).value)


# -- doubling ----------------------------------------------------------------

def _double_sums(u: np.ndarray, grid: TorusGrid, j: int) -> tuple[np.ndarray, np.ndarray]:
    """Sums of ``u`` over every level-``j`` cube ``Q`` and over ``2Q``.

    ``u`` has leading axes ``grid.shape``; results have axis 0 over cubes.
    """
    s = grid.N // 2 ** j
    sq = grid.cube_view(u, j).sum(axis=1)
    # shift by s/2 so level-j blocks cover [ks - s/2, ks + s/2); 2Q is two blocks per axis
    shifted = np.roll(u, (s // 2,) * grid.n, axis=grid.axes)
    blocks = grid.cube_view(shifted, j).sum(axis=1)
    c = 2 ** j
    blocks = blocks.reshape((c,) * grid.n + blocks.shape[1:])
    s2 = blocks
    for ax in range(grid.n):
        s2 = s2 + np.roll(s2, -1, axis=ax)
    return sq, s2.reshape((c ** grid.n,) + blocks.shape[grid.n:])


def doubling_ratios(W: MatrixWeightField, p: float, n_directions: int = 64,
                    seed: int = 0, levels=None) -> dict[int, np.ndarray]:
    """``log2(sum_{2Q} |W^{1/p} z|^p / sum_Q |W^{1/p} z|^p)`` per level, shape ``(cubes, directions)``."""
    p = check_exponent(p, "p")
    grid = W.grid
    if levels is None:
        levels = range(1, grid.L)
    Z = direction_set(W.m, n_directions, seed, complex_=not W.is_real)
    B = W.power(1.0 / p)
    u = np.linalg.norm(np.einsum("...ab,db->...da", B, Z), axis=-1) ** p
    out = {}
    with np.errstate(divide="ignore"):
        for j in levels:
            if not 1 <= j <= grid.L - 1:
                raise ValueError(f"doubling scan needs 1 <= j <= L-1, got {j}")
            sq, s2 = _double_sums(u, grid, j)
            out[j] = np.log2(s2 / sq)
    return out


def doubling_exponent(W: MatrixWeightField, p: float, n_directions: int = 64,
                      seed: int = 0, levels=None) -> float:
    """Largest observed doubling ratio exponent over dyadic cubes and directions."""
    ratios = doubling_ratios(W, p, n_directions, seed, levels)
    return float(max(r.max() for r in ratios.values()))


class ApCharacteristic(BaseEstimator):
    """Estimator wrapper around :func:`ap_characteristic`.

    Parameters
    ----------
    p : float
        Integrability exponent, ``p > 0``.
    j_min : int
        Coarsest scanned level.

    Attributes
    ----------
    report_ : ApReport
    value_ : float
    """

    def __init__(self, p: float = 2.0, j_min: int = 0):
        self.p = p
        self.j_min = j_min

    def fit(self, W: MatrixWeightField, y=None):
        self.report_ = ap_characteristic(W, self.p, self.j_min)
        self.value_ = self.report_.value
        return self
