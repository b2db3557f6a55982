"""
Reducing operators: one positive definite matrix ``A_Q`` per dyadic cube whose
vector norm ``|A_Q z|`` is two-sided comparable to the cube average
``rho_Q(z) = (mean_{x in Q} |W^{1/p}(x) z|^p)^{1/p}``.

Two constructions are provided.  ``gram2`` takes ``A_Q = (mean_Q W^{2/p})^{1/2}``
which is exact at ``p = 2``.  ``john`` samples the unit ball of ``rho_Q`` and fits
its minimum-volume enclosing ellipsoid, which brings the comparability ratio
under ``sqrt(d)`` for a ``d``-dimensional convex body.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils import check_random_state

from ._validation import check_exponent, conjugate_exponent
from .grid import TorusGrid
from .matrix_core import matrix_power, operator_norm
from .weights import MatrixWeightField, direction_set

METHODS = ("gram2", "john")


@dataclass(frozen=True, eq=False)
class ReducingFamily:
    """Matrices ``A_Q`` keyed by level; ``matrices[j]`` has shape ``(2**(j n), m, m)``."""

    grid: TorusGrid
    p: float
    method: str
    matrices: dict[int, np.ndarray]
    _inv: dict = field(default_factory=dict, repr=False)

    @property
    def m(self) -> int:
        return next(iter(self.matrices.values())).shape[-1]

    @property
    def levels(self) -> list[int]:
        return sorted(self.matrices)

    def inverse(self, j: int) -> np.ndarray:
        if j not in self._inv:
            self._inv[j] = np.linalg.inv(self.matrices[j])
        return self._inv[j]

    def on_samples(self, j: int, inverse: bool = False) -> np.ndarray:
        """``A_{Q(x)}`` (or its inverse) for every sample, shape ``grid.shape + (m, m)``."""
        if j not in self.matrices:
            raise KeyError(f"family has no level {j}; levels are {self.levels}")
        A = self.inverse(j) if inverse else self.matrices[j]
        return self.grid.broadcast_cubes(A, j)

    def write_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["level", "cube_index", "row", "col", "re", "im"])
            for j in self.levels:
                A = self.matrices[j]
                for c in range(A.shape[0]):
                    for r in range(A.shape[1]):
                        for s in range(A.shape[2]):
                            v = complex(A[c, r, s])
                            w.writerow([j, c, r, s, repr(v.real), repr(v.imag)])

    @classmethod
    def read_csv(cls, path, grid: TorusGrid, p: float, method: str) -> "ReducingFamily":
        with Path(path).open(newline="") as fh:
            rows = list(csv.DictReader(fh))
        m = max(int(r["row"]) for r in rows) + 1
        mats: dict[int, np.ndarray] = {}
        for r in rows:
            j = int(r["level"])
            if j not in mats:
                mats[j] = np.zeros((2 ** (j * grid.n), m, m), dtype=complex)
            mats[j][int(r["cube_index"]), int(r["row"]), int(r["col"])] = (
                float(r["re"]) + 1j * float(r["im"]))
        for j, A in mats.items():
            if not np.any(A.imag):
                mats[j] = A.real
        return cls(grid, p, method, mats)


def rho(W: MatrixWeightField, p: float, Z: np.ndarray, j: int) -> np.ndarray:
    """``rho_Q(z)`` for every level-``j`` cube and every row of ``Z``; shape ``(cubes, len(Z))``."""
    B = W.power(1.0 / p)
    u = np.linalg.norm(np.einsum("...ab,db->...da", B, Z), axis=-1) ** p
    return W.grid.cube_view(u, j).mean(axis=1) ** (1.0 / p)


def _gram(u: np.ndarray, P: np.ndarray) -> np.ndarray:
    """``sum_k u_k x_k x_k^T`` per batch."""
    return np.swapaxes(P * u[..., None], -1, -2) @ P


def _quad(P: np.ndarray, A: np.ndarray) -> np.ndarray:
    """``x_k^T A x_k`` per batch and point."""
    return ((P @ A) * P).sum(axis=-1)


def _khachiyan(P: np.ndarray, tol: float, max_iter: int) -> np.ndarray:
    """Batched barycentric iteration with Todd-Yildirim away steps; returns design weights."""
    nb, K, d = P.shape
    u = np.full((nb, K), 1.0 / K)
    rows = np.arange(nb)
    for _ in range(max_iter):
        X = _gram(u, P)
        M = _quad(P, np.linalg.inv(X))
        jt = np.argmax(M, axis=1)
        ja = np.argmin(np.where(u > 0, M, np.inf), axis=1)
        Mt, Ma = M[rows, jt], M[rows, ja]
        up, down = Mt / d - 1.0, 1.0 - Ma / d
        done = (up <= tol) & (down <= tol)
        if np.all(done):
            break
        toward = up >= down
        idx = np.where(toward, jt, ja)
        Mi = np.where(toward, Mt, Ma)
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = (Mi / d - 1.0) / (Mi - 1.0)
        ui = u[rows, idx]
        floor = -ui / np.maximum(1.0 - ui, 1e-300)
        # below M = 1 log det keeps rising all the way to a drop step
        away = np.where(Mi > 1.0, np.maximum(np.minimum(lam, 0.0), floor), floor)
        lam = np.where(toward, lam, away)
        lam = np.where(done, 0.0, lam)
        u *= (1.0 - lam)[:, None]
        u[rows, idx] += lam
        u[u < 1e-15] = 0.0
        u /= u.sum(axis=1, keepdims=True)
    return u


def _sym_basis(d: int) -> np.ndarray:
    E = []
    for a in range(d):
        for b in range(a, d):
            M = np.zeros((d, d))
            M[a, b] = M[b, a] = 1.0
            E.append(M)
    return np.array(E)


def _barrier_refine(P: np.ndarray, u: np.ndarray, tol: float) -> np.ndarray:
    """Log-barrier Newton on the ellipsoid matrix, batched; returns ``H``.

    Minimises ``-t log det H - sum log(1 - x_i^T H x_i)`` for growing ``t``.  The
    barrier optimum covers every point strictly and its ``log det`` is within
    ``K / t`` of optimal, so ``t`` is raised until ``K / t <= d log(1 + tol)``: the
    volume certificate that ``max M_i <= d (1 + tol)`` gives a barycentric design.
    """
    nb, K, d = P.shape
    E = _sym_basis(d)
    feat = np.einsum("bki,bkj,eij->bke", P, P, E, optimize=True)
    H = np.linalg.inv(_gram(u, P)) / d
    s = _quad(P, H)
    H /= (s.max(axis=1) * (1.0 + 1e-3))[:, None, None]
    t = float(K)
    target = K / (d * np.log1p(tol))
    while True:
        for _ in range(50):
            Hi = np.linalg.inv(H)
            w = 1.0 / (1.0 - _quad(P, H))
            HiE = np.einsum("bij,ejk->beik", Hi, E)
            grad = -t * np.einsum("beii->be", HiE) + (w[:, None, :] @ feat)[:, 0]
            hess = t * np.einsum("beij,bfji->bef", HiE, HiE, optimize=True) \
                + np.swapaxes(feat * (w ** 2)[..., None], -1, -2) @ feat
            step = -np.linalg.solve(hess, grad[..., None])[..., 0]
            dec = -np.einsum("be,be->b", grad, step)
            live = dec > 1e-12
            if not live.any():
                break
            step[~live] = 0.0
            dH = np.einsum("be,eij->bij", step, E)
            # full Newton steps inside the quadratic region of a self-concordant barrier
            alpha = np.where(live, 1.0, 0.0)
            far = live & (dec > 0.1)
            if far.any():
                f0 = _barrier(H, P, t)
                for _ in range(60):
                    bad = far & ~(_barrier(H + alpha[:, None, None] * dH, P, t)
                                  <= f0 - 0.25 * alpha * dec)
                    if not bad.any():
                        break
                    alpha = np.where(bad, 0.5 * alpha, alpha)
            for _ in range(60):
                bad = live & ~np.isfinite(_barrier(H + alpha[:, None, None] * dH, P, t))
                if not bad.any():
                    break
                alpha = np.where(bad, 0.5 * alpha, alpha)
            H = H + alpha[:, None, None] * dH
        if t >= target:
            return H
        t = min(8.0 * t, target)


def _barrier(H, P, t):
    sign, logdet = np.linalg.slogdet(H)
    s = _quad(P, H)
    with np.errstate(invalid="ignore", divide="ignore"):
        slack = np.log(1.0 - s)
    val = -t * logdet - slack.sum(axis=1)
    ok = (sign > 0) & np.all(s < 1.0, axis=1) & np.isfinite(val)
    return np.where(ok, val, np.inf)


def mvee_centered(points: np.ndarray, tol: float = 1e-7, warm_iter: int = 300) -> np.ndarray:
    """Minimum-volume origin-centred ellipsoid ``{x : x^T H x <= 1}`` around each point set.

    ``points`` has shape ``(batch, K, d)`` (or ``(K, d)``); returns ``H`` with shape
    ``(batch, d, d)``.  The ellipsoid only depends on the outer products ``x x^T``,
    so ``{x_i}`` and ``{+-x_i}`` give the same answer.

    Khachiyan's barycentric iteration with Todd-Yildirim away steps runs until
    ``max M_i <= d (1 + tol)`` or ``warm_iter`` sweeps.  Sets that are not done by
    then (the iteration crawls when neighbouring sample directions share a
    contact point) are finished by a log-barrier Newton solve, stopped at the
    same volume certificate ``d log(1 + tol)``.

    Examples
    --------
    >>> H = mvee_centered(np.array([[1.0, 0.0], [0.0, 2.0], [0.6, 0.6]]))
    >>> np.round(np.diag(H), 6)
    array([1.  , 0.25])
    """
    P = np.asarray(points)
    if np.iscomplexobj(P):
        raise TypeError("mvee_centered expects real points")
    P = P.astype(float)
    single = P.ndim == 2
    if single:
        P = P[None]
    nb, K, d = P.shape
    if K < d:
        raise ValueError("need at least as many points as dimensions")
    u = _khachiyan(P, tol, warm_iter)
    X = _gram(u, P)
    H = np.linalg.inv(X) / d
    M = _quad(P, H) * d
    todo = M.max(axis=1) / d - 1.0 > tol
    if todo.any():
        # affine invariance: whitening by the warm design keeps the Newton systems well scaled
        Lc = np.linalg.cholesky(X[todo])
        Pw = np.linalg.solve(Lc[:, None], P[todo][..., None])[..., 0]
        Hw = _barrier_refine(Pw, u[todo], tol)
        Li = np.linalg.inv(Lc)
        H[todo] = np.swapaxes(Li, -1, -2) @ Hw @ Li
    return H[0] if single else H


def _embed(Z: np.ndarray) -> np.ndarray:
    return np.concatenate([Z.real, Z.imag], axis=-1)


def _framed_rho(B: np.ndarray, grid: TorusGrid, p: float, j: int, Finv: np.ndarray,
                V: np.ndarray) -> np.ndarray:
    """``rho_Q(F_Q^{-1} v)`` per level-``j`` cube and per row of ``V``."""
    BF = B @ grid.broadcast_cubes(Finv, j)
    u = np.linalg.norm(np.einsum("...ab,db->...da", BF, V), axis=-1) ** p
    return grid.cube_view(u, j).mean(axis=1) ** (1.0 / p)


def _john_fit(r: np.ndarray, V: np.ndarray, complex_: bool, tol: float) -> np.ndarray:
    """Ellipsoid norm ``|A v|`` fitted to boundary points ``v / r(v)`` of each body."""
    m = V.shape[1]
    if not complex_:
        H = mvee_centered(V.real[None] / r[:, :, None], tol)
        return matrix_power(H, 0.5)
    # C^m as R^{2m}; the sampled body is invariant under v -> iv, so the
    # ellipsoid is too and its form is the realification of a Hermitian matrix
    pts = np.concatenate([_embed(V), _embed(1j * V)])[None] / np.tile(r, 2)[:, :, None]
    H = mvee_centered(pts, tol)
    X = 0.5 * (H[:, :m, :m] + H[:, m:, m:])
    Y = 0.5 * (H[:, m:, :m] - H[:, :m, m:])
    return matrix_power(X + 1j * Y, 0.5)


def _john_level(W, p, j, V, tol, frame, passes) -> np.ndarray:
    complex_ = bool(np.any(V.imag))
    V = V if complex_ else V.real
    B = W.power(1.0 / p)
    F = frame
    for _ in range(passes):
        # sample the body in its own frame so elongated cubes are not undersampled
        Finv = np.linalg.inv(F)
        r = _framed_rho(B, W.grid, p, j, Finv, V)
        if np.any(r <= 0) or not np.all(np.isfinite(r)):
            raise ValueError("weight not invertible on cube")
        Ap = _john_fit(r, V, complex_, tol)
        # |A z| = |A' F z| with A Hermitian
        G = Ap @ F
        A = matrix_power(np.conj(np.swapaxes(G, -1, -2)) @ G, 0.5)
        # anchor the worst sampled direction: max_v |A' v| / rho(F^{-1} v) = 1
        Av = np.linalg.norm(np.einsum("cab,db->cda", Ap, V), axis=-1)
        A = A / (Av / r).max(axis=1)[:, None, None]
        F = A
    return A


def build_reducing(W: MatrixWeightField, p: float, method: str = "gram2", levels=None,
                   n_directions: int = 128, tol: float = 1e-7, seed: int = 0,
                   passes: int = 2) -> ReducingFamily:
    """Reducing operators of order ``p`` for ``W`` on the requested dyadic levels.

    Parameters
    ----------
    W : MatrixWeightField
    p : float
    method : {"gram2", "john"}
        ``gram2`` is ``(mean_Q W^{2/p})^{1/2}``.  ``john`` fits the minimum-volume
        ellipsoid around ``n_directions`` sampled boundary points of the unit
        ball of ``rho_Q`` and rescales so the worst sampled direction is exact.
    levels : iterable of int, optional
        Defaults to every level ``0..L``.
    n_directions, tol, seed
        Direction sample, ellipsoid tolerance and sampling seed for ``john``.
    passes : int
        ``john`` samples directions in the frame of the previous estimate,
        starting from ``gram2``; each pass refits in the refined frame.
    """
    p = check_exponent(p, "p")
    if method not in METHODS:
        raise ValueError(f"unknown reducing method {method!r}; expected one of {METHODS}")
    grid = W.grid
    levels = list(range(grid.L + 1)) if levels is None else sorted(int(j) for j in levels)
    if any(j < 0 or j > grid.L for j in levels):
        raise ValueError(f"levels must lie in 0..{grid.L}")
    mats = {}
    W2 = W.power(2.0 / p)
    for j in levels:
        mats[j] = matrix_power(grid.cube_view(W2, j).mean(axis=1), 0.5)
    if method == "john":
        V = direction_set(W.m, n_directions, seed, complex_=not W.is_real)
        for j in levels:
            mats[j] = _john_level(W, p, j, V, tol, mats[j], passes)
    return ReducingFamily(grid, p, method, mats)


def verify_reducing(family: ReducingFamily, W: MatrixWeightField, p: float | None = None,
                    trials: int = 100, seed: int = 1) -> tuple[float, float]:
    """Extreme ratios ``rho_Q(z) / |A_Q z|`` over seeded unit ``z`` and every cube."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    p = family.p if p is None else p
    rng = check_random_state(seed)
    real = W.is_real and all(not np.iscomplexobj(A) or not np.any(A.imag)
                             for A in family.matrices.values())
    Z = rng.standard_normal((trials, W.m))
    if not real:
        Z = Z + 1j * rng.standard_normal((trials, W.m))
    Z = Z / np.linalg.norm(Z, axis=1, keepdims=True)
    lo, hi = np.inf, 0.0
    for j in family.levels:
        r = rho(W, p, Z, j)
        Az = np.linalg.norm(np.einsum("cab,db->cda", family.matrices[j], Z), axis=-1)
        ratio = r / Az
        lo, hi = min(lo, float(ratio.min())), max(hi, float(ratio.max()))
    return lo, hi


def verification_json(family: ReducingFamily, constants, trials: int, seed: int) -> dict:
    C1, C2 = constants
    return {"C1": C1, "C2": C2, "method": family.method, "p": family.p,
            "trials": trials, "seed": seed}


def _index_distance(grid: TorusGrid, j: int, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    c = 2 ** j
    ia = np.stack(np.unravel_index(a, (c,) * grid.n), axis=-1)
    ib = np.stack(np.unravel_index(b, (c,) * grid.n), axis=-1)
    d = np.abs(ia - ib)
    d = np.minimum(d, c - d)
    return np.sqrt((d ** 2).sum(axis=-1))


def weak_doubling_order(family: ReducingFamily, n_pairs: int = 512, seed: int = 0) -> float:
    """``max log||A_{Q_jk} A_{Q_jl}^{-1}|| / log(1 + |k - l|)`` over scanned pairs ``k != l``.

    All ordered pairs at the coarsest level with at least two cubes, ``n_pairs``
    seeded pairs on each finer level.  Index distance wraps around the torus.
    """
    rng = np.random.default_rng(seed)
    grid = family.grid
    best = 0.0
    coarse_done = False
    for j in family.levels:
        C = 2 ** (j * grid.n)
        if C < 2:
            continue
        if not coarse_done:
            a, b = np.meshgrid(np.arange(C), np.arange(C), indexing="ij")
            a, b = a.ravel(), b.ravel()
            coarse_done = True
        else:
            a = rng.integers(0, C, n_pairs)
            b = (a + rng.integers(1, C, n_pairs)) % C
        keep = a != b
        a, b = a[keep], b[keep]
        A = family.matrices[j]
        Ainv = family.inverse(j)
        norms = operator_norm(A[a] @ Ainv[b])
        dist = _index_distance(grid, j, a, b)
        best = max(best, float((np.log(norms) / np.log1p(dist)).max()))
    return best


def _all_cubes(family: ReducingFamily):
    grid = family.grid
    lev, idx = [], []
    for j in family.levels:
        C = 2 ** (j * grid.n)
        lev.append(np.full(C, j))
        idx.append(np.arange(C))
    return np.concatenate(lev), np.concatenate(idx)


def strong_doubling_check(family: ReducingFamily, beta: float, p: float | None = None,
                          max_pairs: int = 20000, seed: int = 0) -> float:
    """Empirical constant of the strong doubling inequality with ``C = 1`` on the right."""
    p = family.p if p is None else p
    n = family.grid.n
    lev, idx = _all_cubes(family)
    T = lev.size
    if T * T <= max_pairs:
        a, b = np.meshgrid(np.arange(T), np.arange(T), indexing="ij")
        a, b = a.ravel(), b.ravel()
    else:
        rng = np.random.default_rng(seed)
        a, b = rng.integers(0, T, max_pairs), rng.integers(0, T, max_pairs)
    keep = a != b
    a, b = a[keep], b[keep]
    lq, lp = lev[a], lev[b]
    mats_q = np.stack([family.matrices[j][k] for j, k in zip(lq, idx[a])])
    inv_p = np.stack([family.inverse(j)[k] for j, k in zip(lp, idx[b])])
    lhs = operator_norm(mats_q @ inv_p) ** p
    side_q, side_p = 2.0 ** -lq, 2.0 ** -lp
    corner = lambda j, k: np.stack(np.unravel_index(k, (2 ** j,) * n), axis=-1) * 2.0 ** -j
    cq = np.vstack([corner(j, k) for j, k in zip(lq, idx[a])])
    cp = np.vstack([corner(j, k) for j, k in zip(lp, idx[b])])
    diff = np.abs(cq - cp) % 1.0
    diff = np.minimum(diff, 1.0 - diff)
    dist = np.sqrt((diff ** 2).sum(axis=1))
    size = np.maximum((side_p / side_q) ** n, (side_q / side_p) ** (beta - n))
    rhs = size * (1.0 + dist / np.maximum(side_p, side_q)) ** beta
    return float((lhs / rhs).max())


def reducing_bound_scan(family: ReducingFamily, W: MatrixWeightField, p: float | None = None,
                        etas=None) -> dict:
    """Sup over cubes of ``mean_Q ||A_Q W^{-1/p}||^eta`` (``p > 1``) or of the max (``p <= 1``)."""
    p = family.p if p is None else p
    Winv = W.power(-1.0 / p)
    norms = {j: operator_norm(family.on_samples(j) @ Winv) for j in family.levels}
    grid = W.grid
    if p > 1:
        pp = conjugate_exponent(p)
        etas = np.linspace(pp / 8, pp, 8) if etas is None else np.asarray(etas, dtype=float)
        if np.any(etas <= 0) or np.any(etas > pp * (1 + 1e-12)):
            raise ValueError("scan covers eta in (0, p'] only")
        return {float(e): max(float(grid.cube_view(v ** e, j).mean(axis=1).max())
                              for j, v in norms.items()) for e in etas}
    return {"esssup": max(float(v.max()) for v in norms.values())}


class ReducingOperators(BaseEstimator):
    """Fit reducing operators of order ``p`` to a matrix weight.

    Parameters
    ----------
    p : float
        Order of the reducing operators.
    method : {"auto", "gram2", "john"}
        ``auto`` picks ``gram2`` at ``p == 2`` (exact there) and ``john`` otherwise.
    levels : iterable of int or None
        Dyadic levels to cover; all levels ``0..L`` when None.
    n_directions, tol, random_state
        Direction count, Khachiyan tolerance and seed of the ``john`` fit.
    verify_trials : int
        Random directions used to estimate ``(C1, C2)``; 0 skips verification.

    Attributes
    ----------
    family_ : ReducingFamily
    constants_ : tuple of float or None
    """

    def __init__(self, p: float = 2.0, method: str = "auto", levels=None, n_directions: int = 128,
                 tol: float = 1e-7, random_state: int = 0, verify_trials: int = 100):
        self.p = p
        self.method = method
        self.levels = levels
        self.n_directions = n_directions
        self.tol = tol
        self.random_state = random_state
        self.verify_trials = verify_trials

    def _resolved_method(self) -> str:
        if self.method == "auto":
            return "gram2" if self.p == 2 else "john"
        return self.method

    def fit(self, W: MatrixWeightField, y=None):
        self.family_ = build_reducing(W, self.p, self._resolved_method(), self.levels,
                                      self.n_directions, self.tol, self.random_state)
        self.constants_ = None
        if self.verify_trials:
            self.constants_ = verify_reducing(self.family_, W, self.p, self.verify_trials,
                                              self.random_state + 1)
        return self
