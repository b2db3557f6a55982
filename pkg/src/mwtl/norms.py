"""
Matrix-weighted Triebel-Lizorkin quasi-norms on the torus grid, the maximal
operators they are compared with, and the equivalence harness.

Every norm is built from the Littlewood-Paley pieces ``phi_j * f`` of one
profile.  Integrals over the torus are sample sums with weight ``N^{-n}``, so
values approximate the continuum quantities on ``[0, 1)^n``.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from itertools import combinations
from pathlib import Path

import numpy as np
from scipy.ndimage import maximum_filter
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_corpus, check_exponent, check_field
from .grid import SampledField, TorusGrid, level_means
from .littlewood_paley import AnalysisProfile, lp_pieces
from .matrix_core import operator_norm
from .reducing import ReducingFamily, build_reducing
from .weights import MatrixWeightField, doubling_exponent

NORM_KINDS = ("F", "F_AQ", "star", "star_AQ", "starstar_AQ", "square", "gstar", "gstar_AQ")
PAIRS = tuple((num, den) for den, num in combinations(NORM_KINDS, 2))

# pairwise scans are chunked to about this many entries per temporary
_CHUNK = 1 << 22


@dataclass(frozen=True)
class SpaceParams:
    """Smoothness ``alpha``, integrability ``p``, summability ``q`` and the maximal exponents.

    ``a`` (Peetre decay) and ``lam`` (g-function decay) may be left as None and
    filled in from a doubling exponent with :meth:`resolve`.
    """

    alpha: float = 0.0
    p: float = 2.0
    q: float = 2.0
    a: float | None = None
    lam: float | None = None

    def __post_init__(self):
        check_exponent(self.p, "p")
        check_exponent(self.q, "q", allow_inf=True)
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.a is not None:
            check_exponent(self.a, "a")
        if self.lam is not None:
            check_exponent(self.lam, "lam")

    @property
    def r(self) -> float:
        return min(1.0, self.p, self.q)

    def a_threshold(self, beta: float, n: int) -> float:
        return n / self.r + beta / self.p

    def lam_threshold(self, beta: float, n: int) -> float:
        return 1.0 / self.r + beta / (n * self.p)

    def resolve(self, beta: float, n: int) -> "SpaceParams":
        """Fill missing ``a`` and ``lam`` one and one half unit inside the theorem ranges."""
        a = self.a if self.a is not None else self.a_threshold(beta, n) + 1.0
        lam = self.lam if self.lam is not None else self.lam_threshold(beta, n) + 0.5
        return replace(self, a=a, lam=lam)

    def flags(self, beta: float, n: int) -> dict:
        return {
            "a_valid": self.a is not None and self.a > self.a_threshold(beta, n),
            "lam_valid": self.lam is not None and self.lam > self.lam_threshold(beta, n),
        }

    def to_json(self) -> dict:
        return {"alpha": self.alpha, "p": self.p, "q": "inf" if math.isinf(self.q) else self.q,
                "a": self.a, "lam": self.lam}


# -- scalar maximal machinery --------------------------------------------------

def _box_sums(h: np.ndarray, s: int) -> np.ndarray:
    """Sum of ``h`` over the wrapped box of side ``s`` starting at each sample."""
    out = h
    for ax in range(h.ndim):
        N = out.shape[ax]
        ext = np.concatenate([out, np.take(out, np.arange(s), axis=ax)], axis=ax)
        cs = np.cumsum(ext, axis=ax)
        cs = np.concatenate([np.zeros_like(np.take(cs, [0], axis=ax)), cs], axis=ax)
        out = np.take(cs, np.arange(s, s + N), axis=ax) - np.take(cs, np.arange(N), axis=ax)
    return out


def hl_maximal(h, grid: TorusGrid) -> np.ndarray:
    """Uncentred maximal function over every wrapped discrete cube containing each sample.

    Exact: all side lengths ``1..N`` and all positions are scanned.

    >>> g = TorusGrid(1, 3)
    >>> h = np.zeros(8); h[0] = 1.0
    >>> np.round(hl_maximal(h, g)[:5], 6)
    array([1.      , 0.5     , 0.333333, 0.25    , 0.2     ])
    """
    h = np.asarray(h, dtype=float)
    if h.shape != grid.shape:
        raise ValueError(f"field shape {h.shape} does not match grid {grid.shape}")
    if np.any(h < 0):
        raise ValueError("maximal function expects a nonnegative field")
    best = h.copy()
    for s in range(2, grid.N + 1):
        means = _box_sums(h, s) / s ** grid.n
        # a box starting at t covers x iff t in [x - s + 1, x]
        best = np.maximum(best, maximum_filter(means, size=s, mode="wrap", origin=(s - 1) // 2))
    return best


def ej_average(h, grid: TorusGrid, j: int) -> np.ndarray:
    """Piecewise-constant level-``j`` cube means of ``h``."""
    h = np.asarray(h)
    return grid.broadcast_cubes(level_means(h, grid, j), j)


def gamma_field(W: MatrixWeightField, family: ReducingFamily, p: float, j: int) -> np.ndarray:
    """``||W^{1/p}(x) A_{Q(x)}^{-1}||`` with ``Q(x)`` the level-``j`` cube of ``x``."""
    return operator_norm(W.power(1.0 / p) @ family.on_samples(j, inverse=True))


def _cube_distance(grid: TorusGrid, j: int) -> np.ndarray:
    c = 2 ** j
    idx = np.indices((c,) * grid.n).reshape(grid.n, -1).T
    diff = np.abs(idx[:, None, :] - idx[None, :, :])
    diff = np.minimum(diff, c - diff)
    return np.sqrt((diff ** 2).sum(axis=-1))


def lattice_constant(grid: TorusGrid, j: int, eta: float) -> float:
    """``sum_l (1 + |k - l|)^{-eta}`` over the level-``j`` cubes of the torus."""
    return float(((1.0 + _cube_distance(grid, j)[0]) ** -eta).sum())


def jcf_check(h, grid: TorusGrid, j: int, eta: float) -> float:
    """Max over samples of the cube-lattice average of ``|h|`` divided by ``M(|h|)``.

    The averaged quantity at ``x`` in ``Q_jk`` is
    ``sum_l (1 + |k - l|)^{-eta} mean_{Q_jl} |h|``; 0/0 counts as 0.
    """
    if eta <= grid.n:
        raise ValueError(f"eta must exceed n={grid.n}, got {eta}")
    h = np.abs(np.asarray(h, dtype=float))
    means = level_means(h, grid, j)
    lhs = grid.broadcast_cubes(((1.0 + _cube_distance(grid, j)) ** -eta) @ means, j)
    M = hl_maximal(h, grid)
    ratio = np.divide(lhs, M, out=np.zeros_like(lhs), where=M > 0)
    return float(ratio.max())


def _lp(F: np.ndarray, p: float) -> float:
    if math.isinf(p):
        return float(F.max())
    return float(np.mean(F ** p) ** (1.0 / p))


def _lq(stack: np.ndarray, q: float) -> np.ndarray:
    if math.isinf(q):
        return stack.max(axis=0)
    return (stack ** q).sum(axis=0) ** (1.0 / q)


def fs_check(fields, grid: TorusGrid, p: float = 2.0, q: float = 2.0) -> float:
    """``||(sum_i M(h_i)^q)^{1/q}||_p / ||(sum_i |h_i|^q)^{1/q}||_p``; 0 when every ``h_i`` is 0."""
    p = check_exponent(p, "p", low=1.0, allow_inf=True)
    q = check_exponent(q, "q", low=1.0, allow_inf=True)
    hs = np.stack([np.abs(np.asarray(h, dtype=float)) for h in fields])
    den = _lp(_lq(hs, q), p)
    if den == 0:
        return 0.0
    Ms = np.stack([hl_maximal(h, grid) for h in hs])
    return _lp(_lq(Ms, q), p) / den


def c38_check(W: MatrixWeightField, family: ReducingFamily, p: float, q: float,
              fields, levels) -> float:
    """``||{gamma_j E_j f_j}||_{L^p(l^q)} / ||{E_j f_j}||_{L^p(l^q)}`` over the given levels."""
    grid = W.grid
    levels = list(levels)
    if len(levels) != len(fields):
        raise ValueError("need one field per level")
    E = np.stack([np.abs(ej_average(np.asarray(f), grid, j)) for f, j in zip(fields, levels)])
    den = _lp(_lq(E, q), p)
    if den == 0:
        return 0.0
    gam = np.stack([gamma_field(W, family, p, j) for j in levels])
    return _lp(_lq(gam * E, q), p) / den


# -- pairwise engine -----------------------------------------------------------

def _pair_scan(B: np.ndarray, v: np.ndarray, grid: TorusGrid, j: int, mode: str,
               expo: float = 0.0, q: float = 2.0) -> np.ndarray:
    """Reduce ``|B(x) v(y)|`` over ``y`` for every base point ``x``.

    ``B`` has shape ``(S, m, m)`` and ``v`` shape ``(S, m)`` with ``S = grid.size``.
    Modes: ``peetre`` (sup with decay ``expo``), ``ball`` (``L^q`` mean over
    ``|x - y| < 2^{-j}``) and ``gstar`` (``2^{jn} N^{-n}`` weighted ``q``-sum with decay
    ``expo``, then the ``1/q`` root).
    """
    S, m = v.shape
    G = (np.conj(np.swapaxes(B, -1, -2)) @ B).reshape(S, m * m)
    O = (np.conj(v)[:, :, None] * v[:, None, :]).reshape(S, m * m)
    out = np.empty(S)
    scale = 2.0 ** j
    step = max(1, _CHUNK // S)
    for start in range(0, S, step):
        rows = np.arange(start, min(S, start + step))
        # |B(x) v(y)|^2 = sum_ab G_ab(x) conj(v_a(y)) v_b(y)
        sq = np.maximum((G[rows] @ O.T).real, 0.0)
        d = grid.pair_distance(rows)
        if mode == "peetre":
            out[rows] = (np.sqrt(sq) / (1.0 + scale * d) ** expo).max(axis=1)
        elif mode == "ball":
            inside = d < 1.0 / scale
            if math.isinf(q):
                out[rows] = np.sqrt(np.where(inside, sq, 0.0).max(axis=1))
            else:
                tot = np.where(inside, sq ** (q / 2), 0.0).sum(axis=1)
                out[rows] = (tot / inside.sum(axis=1)) ** (1.0 / q)
        elif mode == "gstar":
            ker = (1.0 + scale * d) ** -expo
            out[rows] = (scale ** grid.n / S * (sq ** (q / 2) * ker).sum(axis=1)) ** (1.0 / q)
        else:
            raise ValueError(f"unknown scan mode {mode!r}")
    return out


def _cube_max(field_: np.ndarray, grid: TorusGrid, j: int) -> np.ndarray:
    return grid.broadcast_cubes(grid.cube_view(field_, j).max(axis=1), j)


class _Pieces:
    """Littlewood-Paley pieces of one field, shared by all norm evaluations."""

    def __init__(self, f: SampledField, profile: AnalysisProfile):
        self.f = f
        self.grid = f.grid
        self.profile = profile
        self.scales = list(profile.scales)
        self.values = lp_pieces(f, profile)

    def flat(self, i: int) -> np.ndarray:
        return self.values[i].reshape(self.grid.size, -1)

    def combine(self, fields: list[np.ndarray], params: SpaceParams) -> float:
        w = np.array([2.0 ** (j * params.alpha) for j in self.scales])
        stack = np.stack(fields) * w.reshape((-1,) + (1,) * self.grid.n)
        return _lp(_lq(stack, params.q), params.p)


def _flat_mats(M: np.ndarray, grid: TorusGrid) -> np.ndarray:
    return np.broadcast_to(M, grid.shape + M.shape[-2:]).reshape(grid.size, *M.shape[-2:])


def _aq_mats(family: ReducingFamily, grid: TorusGrid, j: int) -> np.ndarray:
    if j not in family.matrices:
        raise ValueError(f"reducing family does not cover scale {j}")
    return family.on_samples(j).reshape(grid.size, family.m, family.m)


def _check_family(family: ReducingFamily, params: SpaceParams, pieces: _Pieces) -> None:
    if not math.isclose(family.p, params.p):
        raise ValueError(f"reducing family has order p={family.p}, norm uses p={params.p}")
    if family.grid != pieces.grid:
        raise ValueError("reducing family lives on a different grid")
    missing = sorted(set(pieces.scales) - set(family.levels))
    if missing:
        raise ValueError(f"reducing family does not cover scales {missing}")


def _need(params: SpaceParams, name: str, beta: float | None, n: int) -> SpaceParams:
    if getattr(params, name) is None:
        if beta is None:
            raise ValueError(f"{name} is unset; pass beta or resolve the parameters")
        params = params.resolve(beta, n)
    return params


def _tail_check(params: SpaceParams, n: int) -> None:
    if not math.isinf(params.q) and params.lam * n * params.q <= n:
        raise ValueError("tail divergence: need lam * n * q > n")


def _field_F(pc: _Pieces, B: np.ndarray) -> list[np.ndarray]:
    out = []
    for i in range(len(pc.scales)):
        v = pc.values[i]
        Bj = B(i) if callable(B) else B
        out.append(np.linalg.norm(np.einsum("...ab,...b->...a", Bj, v), axis=-1))
    return out


def _fields_scan(pc: _Pieces, mats, mode: str, expo: float, q: float,
                 cube_sup: bool = False) -> list[np.ndarray]:
    out = []
    for i, j in enumerate(pc.scales):
        Bj = mats(j)
        f = _pair_scan(Bj, pc.flat(i), pc.grid, j, mode, expo, q).reshape(pc.grid.shape)
        out.append(_cube_max(f, pc.grid, j) if cube_sup else f)
    return out


def _w_mats(W: MatrixWeightField, p: float):
    flat = _flat_mats(W.power(1.0 / p), W.grid)
    return lambda j: flat


def _gstar_mode(params: SpaceParams, n: int) -> tuple[str, float, float]:
    # q = inf: the l^q sum over y degenerates to a Peetre sup with decay lam * n
    if math.isinf(params.q):
        return "peetre", params.lam * n, 2.0
    return "gstar", params.lam * n * params.q, params.q


def _evaluate(kind: str, pc: _Pieces, params: SpaceParams, W=None, family=None) -> float:
    grid, n = pc.grid, pc.grid.n
    if kind in ("F_AQ", "star_AQ", "starstar_AQ", "gstar_AQ"):
        if family is None:
            raise ValueError(f"{kind} needs a reducing family")
        _check_family(family, params, pc)
        aq = lambda j: _aq_mats(family, grid, j)
    else:
        if W is None:
            raise ValueError(f"{kind} needs a weight")
        wm = _w_mats(W, params.p)
    if kind == "F":
        fields = _field_F(pc, W.power(1.0 / params.p))
    elif kind == "F_AQ":
        fields = _field_F(pc, lambda i: family.on_samples(pc.scales[i]))
    elif kind == "star":
        fields = _fields_scan(pc, wm, "peetre", params.a, 2.0)
    elif kind == "star_AQ":
        fields = _fields_scan(pc, aq, "peetre", params.a, 2.0)
    elif kind == "starstar_AQ":
        fields = _fields_scan(pc, aq, "peetre", params.a, 2.0, cube_sup=True)
    elif kind == "square":
        fields = _fields_scan(pc, wm, "ball", 0.0, params.q)
    elif kind == "gstar":
        _tail_check(params, n)
        mode, expo, q = _gstar_mode(params, n)
        fields = _fields_scan(pc, wm, mode, expo, q)
    elif kind == "gstar_AQ":
        _tail_check(params, n)
        mode, expo, q = _gstar_mode(params, n)
        fields = _fields_scan(pc, aq, mode, expo, q, cube_sup=True)
    else:
        raise ValueError(f"unknown norm kind {kind!r}; expected one of {NORM_KINDS}")
    return pc.combine(fields, params)


# -- public norm functions -----------------------------------------------------

def norm_F(f, W: MatrixWeightField, params: SpaceParams, profile: AnalysisProfile) -> float:
    """``|| (sum_j |2^{j alpha} W^{1/p} (phi_j * f)|^q)^{1/q} ||_{L^p}``."""
    return _evaluate("F", _Pieces(check_field(f, W.grid, W.m), profile), params, W=W)


def norm_F_AQ(f, family: ReducingFamily, params: SpaceParams, profile: AnalysisProfile) -> float:
    """As :func:`norm_F` with ``W^{1/p}(x)`` replaced by ``A_Q`` for the level-``j`` cube of ``x``."""
    f = check_field(f, family.grid, family.m)
    return _evaluate("F_AQ", _Pieces(f, profile), params, family=family)


def peetre_field(f, W: MatrixWeightField, p: float, j: int, a: float,
                 profile: AnalysisProfile) -> np.ndarray:
    """``max_y |W^{1/p}(x) (phi_j * f)(y)| / (1 + 2^j |x - y|)^a`` at every sample ``x``."""
    check_exponent(a, "a")
    f = check_field(f, W.grid, W.m)
    pc = _Pieces(f, profile)
    if j not in pc.scales:
        raise ValueError(f"scale {j} outside the profile window")
    i = pc.scales.index(j)
    B = _flat_mats(W.power(1.0 / p), W.grid)
    return _pair_scan(B, pc.flat(i), W.grid, j, "peetre", a).reshape(W.grid.shape)


def norm_star(f, W, params: SpaceParams, profile, beta: float | None = None) -> float:
    """Peetre maximal quasi-norm with decay ``params.a``."""
    params = _need(params, "a", beta, W.grid.n)
    return _evaluate("star", _Pieces(check_field(f, W.grid, W.m), profile), params, W=W)


def norm_star_AQ(f, family, params: SpaceParams, profile, beta: float | None = None) -> float:
    """Peetre maximal quasi-norm with ``A_Q`` in place of ``W^{1/p}``."""
    params = _need(params, "a", beta, family.grid.n)
    f = check_field(f, family.grid, family.m)
    return _evaluate("star_AQ", _Pieces(f, profile), params, family=family)


def norm_starstar_AQ(f, family, params: SpaceParams, profile, beta: float | None = None) -> float:
    """As :func:`norm_star_AQ`, with the base point also maximised over its cube."""
    params = _need(params, "a", beta, family.grid.n)
    f = check_field(f, family.grid, family.m)
    return _evaluate("starstar_AQ", _Pieces(f, profile), params, family=family)


def norm_square(f, W, params: SpaceParams, profile) -> float:
    """Lusin area quasi-norm: ``L^q`` ball means of radius ``2^{-j}`` in place of point values."""
    return _evaluate("square", _Pieces(check_field(f, W.grid, W.m), profile), params, W=W)


def norm_gstar(f, W, params: SpaceParams, profile, beta: float | None = None) -> float:
    """``g_lambda^*`` quasi-norm with kernel ``(1 + 2^j |x - y|)^{-lam n q}``."""
    params = _need(params, "lam", beta, W.grid.n)
    return _evaluate("gstar", _Pieces(check_field(f, W.grid, W.m), profile), params, W=W)


def norm_gstar_AQ(f, family, params: SpaceParams, profile, beta: float | None = None) -> float:
    """``g_lambda^*`` quasi-norm with ``A_Q``, base point maximised over its cube."""
    params = _need(params, "lam", beta, family.grid.n)
    f = check_field(f, family.grid, family.m)
    return _evaluate("gstar_AQ", _Pieces(f, profile), params, family=family)


def all_norms(f, W: MatrixWeightField, family: ReducingFamily | None, params: SpaceParams,
              profile: AnalysisProfile, kinds=NORM_KINDS) -> dict[str, float]:
    """Several norms of one field from a single set of pieces; ``params`` must be resolved."""
    pc = _Pieces(check_field(f, W.grid, W.m), profile)
    return {k: _evaluate(k, pc, params, W=W, family=family) for k in kinds}


# -- equivalence harness -------------------------------------------------------

@dataclass
class NormReport:
    """All norm values of one corpus member plus the pairwise ratios ``num / den``."""

    config_id: str
    member_id: int
    values: dict[str, float]
    ratios: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.ratios:
            for num, den in PAIRS:
                if num in self.values and den in self.values and self.values[den] > 0:
                    self.ratios[f"{num}/{den}"] = self.values[num] / self.values[den]


@dataclass
class EquivalenceReport:
    config_id: str
    params: SpaceParams
    members: list[NormReport]
    aggregate: dict[str, dict]

    def spread(self, pair: str) -> float:
        return self.aggregate[pair]["spread"]

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["config_id", "member_id", "norm_kind", "value"])
            for r in self.members:
                for k, v in r.values.items():
                    w.writerow([r.config_id, r.member_id, k, repr(v)])

    def aggregate_json(self) -> list[dict]:
        return [{"pair": k, **v} for k, v in self.aggregate.items()]


def config_fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:12]


def equivalence_report(corpus, W: MatrixWeightField, family: ReducingFamily | None,
                       params: SpaceParams, profile: AnalysisProfile, beta: float | None = None,
                       config_id: str | None = None, kinds=NORM_KINDS) -> EquivalenceReport:
    """Norm values and pairwise ratio spreads over a corpus.

    Members whose denominators vanish (the zero field) contribute no ratios.
    """
    if params.a is None or params.lam is None:
        if beta is None:
            raise ValueError("a or lam unset; pass beta or resolve the parameters")
        params = params.resolve(beta, W.grid.n)
    corpus = check_corpus(corpus, W.grid, W.m)
    if config_id is None:
        config_id = config_fingerprint({"params": params.to_json(), "profile": profile.to_json(),
                                        "grid": [W.grid.n, W.grid.L], "m": W.m})
    members = [NormReport(config_id, i, all_norms(f, W, family, params, profile, kinds))
               for i, f in enumerate(corpus)]
    aggregate = {}
    for num, den in PAIRS:
        key = f"{num}/{den}"
        vals = [r.ratios[key] for r in members if key in r.ratios]
        if vals:
            hi, lo = max(vals), min(vals)
            aggregate[key] = {"max_ratio": hi, "min_ratio": lo, "spread": hi / lo}
    return EquivalenceReport(config_id, params, members, aggregate)


class TriebelLizorkinNorm(TransformerMixin, BaseEstimator):
    """Fit a weight once, then map corpora to their matrix-weighted norm values.

    Parameters
    ----------
    alpha, p, q : float
        Space parameters.
    a, lam : float or None
        Maximal-function exponents; None derives them from the doubling exponent.
    c1, c2, j_min, j_max
        Littlewood-Paley profile.
    reducing_method : {"auto", "gram2", "john"}
    kinds : tuple of str
        Norms reported by :meth:`transform`, in column order.

    Attributes
    ----------
    beta_ : float
    params_ : SpaceParams
    profile_ : AnalysisProfile
    family_ : ReducingFamily or None
    """

    def __init__(self, alpha: float = 0.0, p: float = 2.0, q: float = 2.0, a=None, lam=None,
                 c1: float = 0.5, c2: float = 2.0, j_min: int = 0, j_max: int = 4,
                 reducing_method: str = "auto", kinds=NORM_KINDS):
        self.alpha = alpha
        self.p = p
        self.q = q
        self.a = a
        self.lam = lam
        self.c1 = c1
        self.c2 = c2
        self.j_min = j_min
        self.j_max = j_max
        self.reducing_method = reducing_method
        self.kinds = kinds

    def fit(self, W: MatrixWeightField, y=None):
        from .littlewood_paley import make_profile

        self.W_ = W
        self.profile_ = make_profile(self.c1, self.c2, (self.j_min, self.j_max), W.grid)
        self.beta_ = doubling_exponent(W, self.p)
        self.params_ = SpaceParams(self.alpha, self.p, self.q, self.a, self.lam).resolve(
            self.beta_, W.grid.n)
        self.family_ = None
        if any(k.endswith("AQ") for k in self.kinds):
            method = self.reducing_method
            if method == "auto":
                method = "gram2" if self.p == 2 else "john"
            self.family_ = build_reducing(W, self.p, method, levels=self.profile_.scales)
        return self

    def transform(self, X) -> np.ndarray:
        corpus = check_corpus(X, self.W_.grid, self.W_.m)
        return np.array([[v for v in all_norms(f, self.W_, self.family_, self.params_,
                                               self.profile_, self.kinds).values()]
                         for f in corpus])
