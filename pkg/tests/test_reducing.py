import json

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize
from sklearn.base import clone

from conftest import random_spd
from mwtl.grid import TorusGrid
from mwtl.reducing import (ReducingFamily, ReducingOperators, build_reducing, mvee_centered,
                           reducing_bound_scan, rho, strong_doubling_check, verification_json,
                           verify_reducing, weak_doubling_order)
from mwtl.weights import (MatrixWeightField, WeightSpec, doubling_exponent, generate_weight,
                          random_smooth_weight)


def slsqp_mvee(P):
    """Origin-centred MVEE by direct constrained minimisation of -log det over Cholesky factors."""
    d = P.shape[1]
    tril = np.tril_indices(d)

    def unpack(x):
        L = np.zeros((d, d))
        L[tril] = x
        return L

    def obj(x):
        return -2 * np.sum(np.log(np.abs(np.diag(unpack(x)))))

    def cons(x):
        L = unpack(x)
        return 1.0 - np.sum((P @ L) ** 2, axis=1)

    x0 = (np.eye(d) / (2 * np.abs(P).max() * np.sqrt(d)))[tril]
    res = minimize(obj, x0, constraints=[{"type": "ineq", "fun": cons}], method="SLSQP",
                   options={"ftol": 1e-14, "maxiter": 2000})
    L = unpack(res.x)
    return L @ L.T


def loop_rho(W, p, z, j):
    """rho_Q(z) per cube via explicit loops over samples."""
    g = W.grid
    labels = g.cube_labels(j).ravel()
    flat = W.values.reshape(g.size, W.m, W.m)
    vals = []
    for c in range(2 ** (j * g.n)):
        acc = 0.0
        idx = np.flatnonzero(labels == c)
        for x in idx:
            lam, U = np.linalg.eigh(flat[x])
            B = (U * lam ** (1 / p)) @ np.conj(U.T)
            acc += np.linalg.norm(B @ z) ** p
        vals.append((acc / idx.size) ** (1 / p))
    return np.array(vals)


@pytest.fixture(scope="module")
def smooth64():
    return random_smooth_weight(TorusGrid(1, 6), 2, seed=3)


def test_rho_matches_loops(smooth64):
    z = np.array([0.6, 0.8j])
    for p in (0.5, 2.0, 3.0):
        for j in (0, 3):
            assert np.allclose(rho(smooth64, p, z[None], j)[:, 0], loop_rho(smooth64, p, z, j),
                               rtol=1e-12)


def test_mvee_axis_points_give_diagonal():
    pts = np.array([[2.0, 0.0], [0.0, 0.5], [-2.0, 0.0]])
    assert np.allclose(mvee_centered(pts, tol=1e-10), np.diag([0.25, 4.0]), atol=1e-6)


def test_mvee_regular_polygon_is_unit_disc():
    t = 2 * np.pi * np.arange(7) / 7
    pts = np.stack([np.cos(t), np.sin(t)], axis=1)
    assert np.allclose(mvee_centered(pts, tol=1e-10), np.eye(2), atol=1e-6)


@pytest.mark.parametrize("seed", range(4))
def test_mvee_matches_direct_optimisation(seed):
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((9, 3)) * np.array([1.0, 2.0, 0.5])
    H = mvee_centered(P, tol=1e-10)
    H_ref = slsqp_mvee(P)
    assert np.linalg.slogdet(H)[1] == pytest.approx(np.linalg.slogdet(H_ref)[1], abs=1e-5)
    assert np.all(np.einsum("ki,ij,kj->k", P, H, P) <= 1 + 1e-6)


def test_mvee_sign_invariance_and_batch():
    rng = np.random.default_rng(7)
    P = rng.standard_normal((2, 8, 2))
    H = mvee_centered(P, tol=1e-10)
    flipped = P * np.where(rng.random((2, 8, 1)) < 0.5, -1.0, 1.0)
    assert np.allclose(mvee_centered(flipped, tol=1e-10), H, atol=1e-7)
    assert np.allclose(mvee_centered(P[1], tol=1e-10), H[1], atol=1e-7)


def test_mvee_rejects_bad_input():
    with pytest.raises(TypeError):
        mvee_centered(np.ones((3, 2), dtype=complex))
    with pytest.raises(ValueError):
        mvee_centered(np.ones((1, 2)))


def test_gram2_is_exact_at_p2(smooth64):
    fam = build_reducing(smooth64, 2.0, "gram2")
    rng = np.random.default_rng(0)
    Z = rng.standard_normal((20, 2)) + 1j * rng.standard_normal((20, 2))
    for j in fam.levels:
        r = rho(smooth64, 2.0, Z, j)
        Az = np.linalg.norm(np.einsum("cab,db->cda", fam.matrices[j], Z), axis=-1)
        assert np.max(np.abs(r - Az) / Az) < 1e-9
    lo, hi = verify_reducing(fam, smooth64)
    assert lo == pytest.approx(1.0, abs=1e-9) and hi == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("method", ["gram2", "john"])
def test_constant_weight_is_exact(method):
    g = TorusGrid(1, 5)
    W0 = random_spd(np.random.default_rng(1), 2)
    W = generate_weight(WeightSpec("constant", matrix=W0), g, 2)
    for p in (0.5, 1.5, 3.0):
        fam = build_reducing(W, p, method, n_directions=64)
        assert verify_reducing(fam, W) == pytest.approx((1.0, 1.0), abs=1e-5)


@pytest.mark.parametrize("method", ["gram2", "john"])
def test_identity_weight_gives_identity(method):
    W = generate_weight(WeightSpec("identity"), TorusGrid(1, 4), 3)
    fam = build_reducing(W, 1.5, method, n_directions=64)
    for j in fam.levels:
        assert np.allclose(fam.matrices[j], np.eye(3), atol=1e-6)


@pytest.mark.parametrize("p", [1.0, 1.5, 3.0])
def test_john_within_sqrt_m(p, smooth64):
    fam = build_reducing(smooth64, p, "john", n_directions=128)
    lo, hi = verify_reducing(fam, smooth64, trials=200)
    # the anchor is exact on sampled directions only; off-sample points sit a
    # little outside the hull of the sampled boundary
    assert lo <= 1 + 1e-9 and hi <= 1.15
    assert hi / lo <= np.sqrt(2) * (1 + 1e-3)


def test_john_matrices_hermitian_pd(smooth64):
    fam = build_reducing(smooth64, 3.0, "john")
    for A in fam.matrices.values():
        assert np.allclose(A, np.conj(np.swapaxes(A, -1, -2)), atol=1e-10)
        assert np.all(np.linalg.eigvalsh(A) > 0)


@given(seed=st.integers(0, 2 ** 16))
def test_gram2_unitary_equivariance(seed):
    rng = np.random.default_rng(seed)
    W = random_smooth_weight(TorusGrid(1, 4), 2, seed=seed % 97)
    U, _ = np.linalg.qr(rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2)))
    A = build_reducing(W, 1.5, "gram2", levels=[2]).matrices[2]
    AU = build_reducing(W.conjugated(U), 1.5, "gram2", levels=[2]).matrices[2]
    assert np.allclose(AU, np.conj(U.T) @ A @ U, atol=1e-10)


@given(c=st.floats(0.1, 10.0), p=st.sampled_from([0.5, 1.5, 2.0, 4.0]))
def test_gram2_scaling(c, p):
    W = random_smooth_weight(TorusGrid(1, 4), 2, seed=5)
    A = build_reducing(W, p, "gram2", levels=[1]).matrices[1]
    Ac = build_reducing(W.scaled(c), p, "gram2", levels=[1]).matrices[1]
    assert np.allclose(Ac, c ** (1 / p) * A, rtol=1e-10)


def test_levels_and_method_validation(smooth64):
    with pytest.raises(ValueError):
        build_reducing(smooth64, 2.0, "frobenius")
    with pytest.raises(ValueError):
        build_reducing(smooth64, 2.0, levels=[7])
    with pytest.raises(ValueError):
        verify_reducing(build_reducing(smooth64, 2.0, levels=[1]), smooth64, trials=0)
    fam = build_reducing(smooth64, 2.0, levels=[3, 1])
    assert fam.levels == [1, 3]
    with pytest.raises(KeyError):
        fam.on_samples(2)


def test_on_samples_broadcast(smooth64):
    fam = build_reducing(smooth64, 2.0, levels=[2])
    S = fam.on_samples(2)
    assert S.shape == (64, 2, 2)
    assert np.allclose(S[:16], fam.matrices[2][0])
    assert np.allclose(fam.on_samples(2, inverse=True)[20] @ S[20], np.eye(2))


def test_csv_round_trip(tmp_path, smooth64):
    fam = build_reducing(smooth64, 1.5, "john", levels=[0, 2])
    path = tmp_path / "reducing.csv"
    fam.write_csv(path)
    header = path.read_text().splitlines()[0]
    assert header == "level,cube_index,row,col,re,im"
    back = ReducingFamily.read_csv(path, smooth64.grid, 1.5, "john")
    assert back.levels == [0, 2]
    for j in back.levels:
        assert np.array_equal(back.matrices[j], fam.matrices[j])


def test_verification_json(smooth64):
    fam = build_reducing(smooth64, 2.0, levels=[1])
    obj = verification_json(fam, (1.0, 1.0), 100, 1)
    assert json.loads(json.dumps(obj)) == {"C1": 1.0, "C2": 1.0, "method": "gram2", "p": 2.0,
                                           "trials": 100, "seed": 1}


def test_weak_doubling_trivial_for_constant():
    g = TorusGrid(1, 6)
    W = generate_weight(WeightSpec("constant", matrix=np.diag([3.0, 1.0])), g, 2)
    assert weak_doubling_order(build_reducing(W, 2.0)) == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("p", [1.5, 2.0])
def test_weak_doubling_bounded_by_doubling_exponent(p):
    g = TorusGrid(1, 8)
    W = generate_weight(WeightSpec("diagonal_power", exponents=(0.5, -0.3), center=(0.25,)), g, 2)
    beta = doubling_exponent(W, p)
    fam = build_reducing(W, p, "gram2" if p == 2 else "john")
    assert weak_doubling_order(fam) <= beta / p + 0.2


def test_strong_doubling_constant_weight_is_one():
    g = TorusGrid(1, 5)
    W = generate_weight(WeightSpec("constant", matrix=np.diag([2.0, 1.0])), g, 2)
    fam = build_reducing(W, 2.0)
    assert strong_doubling_check(fam, beta=1.0) == pytest.approx(1.0, abs=1e-12)


def test_strong_doubling_stable_under_refinement():
    vals = []
    for L in (7, 8):
        g = TorusGrid(1, L)
        W = generate_weight(WeightSpec("rotating", exponents=(0.5, -0.3), center=(0.25,), rate=1.0),
                            g, 2)
        beta = doubling_exponent(W, 2.0)
        vals.append(strong_doubling_check(build_reducing(W, 2.0), beta))
    assert np.isfinite(vals).all()
    assert vals[1] / vals[0] == pytest.approx(1.0, abs=0.25)


def test_bound_scan_constant_is_one():
    g = TorusGrid(1, 5)
    W = generate_weight(WeightSpec("constant", matrix=np.diag([2.0, 1.0])), g, 2)
    scan = reducing_bound_scan(build_reducing(W, 2.0), W)
    assert len(scan) == 8
    assert all(v == pytest.approx(1.0, abs=1e-10) for v in scan.values())
    esssup = reducing_bound_scan(build_reducing(W, 0.5), W)
    assert esssup["esssup"] == pytest.approx(1.0, abs=1e-10)


def test_bound_scan_rejects_large_eta(smooth64):
    with pytest.raises(ValueError):
        reducing_bound_scan(build_reducing(smooth64, 2.0), smooth64, etas=[3.0])


def test_bound_scan_stable_under_refinement():
    vals = []
    for L in (7, 8):
        g = TorusGrid(1, L)
        W = generate_weight(WeightSpec("diagonal_power", exponents=(-0.2, -0.5), center=(0.25,)), g, 2)
        vals.append(reducing_bound_scan(build_reducing(W, 0.5, "john"), W)["esssup"])
    assert vals[1] / vals[0] == pytest.approx(1.0, abs=0.25)


def test_estimator(smooth64):
    est = ReducingOperators(p=2.0)
    assert est._resolved_method() == "gram2"
    assert ReducingOperators(p=3.0)._resolved_method() == "john"
    est.fit(smooth64)
    assert est.constants_ == pytest.approx((1.0, 1.0), abs=1e-9)
    c = clone(est)
    assert c.get_params() == est.get_params() and not hasattr(c, "family_")
    assert ReducingOperators(p=2.0, verify_trials=0).fit(smooth64).constants_ is None


def test_weight_must_be_invertible():
    g = TorusGrid(1, 3)
    vals = np.broadcast_to(np.eye(2), (8, 2, 2)).copy()
    with pytest.raises(ValueError):
        MatrixWeightField(g, vals * 0)
