import json

import numpy as np
import pytest
import scipy.linalg as sla
from hypothesis import given, strategies as st
from sklearn.base import clone

from conftest import random_spd
from mwtl.grid import TorusGrid, double_cube_samples
from mwtl.weights import (ApCharacteristic, MatrixWeightField, WeightSpec, ap_characteristic,
                          direction_set, doubling_exponent, doubling_ratios, duality_check,
                          generate_weight, norm_weight_field, random_smooth_weight,
                          scalar_ap_characteristic, scalar_reduction)


def brute_ap(W: MatrixWeightField, p: float) -> float:
    """Matrix A_p over dyadic cubes with explicit loops and scipy powers."""
    g = W.grid
    flat = W.values.reshape(g.size, W.m, W.m)
    B = [sla.fractional_matrix_power(M, 1 / p) for M in flat]
    Bi = [sla.fractional_matrix_power(M, -1 / p) for M in flat]
    best = 0.0
    for j in range(g.L + 1):
        labels = g.cube_labels(j).ravel()
        for c in range(2 ** (j * g.n)):
            idx = np.flatnonzero(labels == c)
            norms = np.array([[np.linalg.norm(B[x] @ Bi[y], 2) for y in idx] for x in idx])
            if p > 1:
                pp = p / (p - 1)
                val = np.mean(np.mean(norms ** pp, axis=1) ** (p / pp))
            else:
                val = np.max(np.mean(norms ** p, axis=0))
            best = max(best, val)
    return best


def brute_scalar_ap(w, p):
    N = w.size
    best = 0.0
    for j in range(int(np.log2(N)) + 1):
        s = N // 2 ** j
        for k in range(2 ** j):
            c = w[k * s:(k + 1) * s]
            if p > 1:
                val = c.mean() * np.mean(c ** (-1 / (p - 1))) ** (p - 1)
            else:
                val = c.mean() / c.min()
            best = max(best, val)
    return best


def test_generate_identity_and_constant():
    g = TorusGrid(1, 3)
    assert np.allclose(generate_weight(WeightSpec("identity"), g, 3).values, np.eye(3))
    W0 = np.array([[2.0, 0.5], [0.5, 1.0]])
    assert np.allclose(generate_weight(WeightSpec("constant", matrix=W0), g, 2).values, W0)


def test_generate_power_weight_value():
    g = TorusGrid(1, 3)
    W = generate_weight(WeightSpec("diagonal_power", exponents=(1.0,), center=0.0), g, 1)
    assert W.values[2, 0, 0] == pytest.approx(0.25)
    # singular sample uses distance spacing/2
    assert W.values[0, 0, 0] == pytest.approx(1 / 16)


def test_inadmissible_exponent():
    with pytest.raises(ValueError, match="inadmissible exponent"):
        generate_weight(WeightSpec("scalar", exponents=(-1.0,)), TorusGrid(1, 4), 2)


def test_spec_json_round_trip():
    spec = WeightSpec("rotating", exponents=(0.5, -0.3), center=(0.25,), rate=1.0)
    back = WeightSpec.from_json(json.loads(json.dumps(spec.to_json())))
    assert back.to_json() == spec.to_json()
    with pytest.raises(ValueError):
        WeightSpec.from_json({"kind": "identity", "colour": 1})


def test_spec_admissibility_flag():
    assert WeightSpec("diagonal_power", exponents=(0.5, -0.3)).admissible_for(2, 1)
    assert not WeightSpec("diagonal_power", exponents=(1.5,)).admissible_for(2, 1)
    assert not WeightSpec("diagonal_power", exponents=(0.5,)).admissible_for(0.5, 1)


def test_cached_powers_are_inverse():
    W = random_smooth_weight(TorusGrid(1, 5), 3, seed=2)
    B, Bi = W.powers(1.5)
    assert np.abs(B @ Bi - np.eye(3)).max() < 1e-9


def test_rotating_weight_does_not_commute():
    W = generate_weight(WeightSpec("rotating", exponents=(0.5, -0.3), center=0.25, rate=1.0),
                        TorusGrid(1, 5), 2)
    # an eighth of a turn apart (a quarter turn would swap the eigenbases)
    A, B = W.values[3], W.values[7]
    assert np.abs(A @ B - B @ A).max() > 1e-3


@pytest.mark.parametrize("p", [0.5, 1.0, 2.0, 4.0])
def test_ap_identity_and_constant(p):
    g = TorusGrid(1, 5)
    assert ap_characteristic(generate_weight(WeightSpec("identity"), g, 2), p).value == \
        pytest.approx(1.0, abs=1e-9)
    W0 = random_spd(np.random.default_rng(1), 2)
    Wc = MatrixWeightField(g, np.broadcast_to(W0, g.shape + (2, 2)))
    assert ap_characteristic(Wc, p).value == pytest.approx(1.0, abs=1e-9)


@pytest.mark.parametrize("p", [0.6, 1.0, 1.5, 3.0])
@pytest.mark.parametrize("kind", ["rotating", "smooth"])
def test_ap_matches_brute_force(p, kind):
    g = TorusGrid(1, 4)
    if kind == "rotating":
        W = generate_weight(WeightSpec("rotating", exponents=(0.4, -0.2), center=0.25, rate=1.0), g, 2)
    else:
        W = random_smooth_weight(g, 2, seed=5)
    assert ap_characteristic(W, p).value == pytest.approx(brute_ap(W, p), rel=1e-9)


@given(st.integers(0, 500), st.floats(1.1, 4.0), st.floats(0.1, 50.0))
def test_ap_scale_and_unitary_invariance(seed, p, c):
    g = TorusGrid(1, 4)
    W = random_smooth_weight(g, 2, seed=seed)
    base = ap_characteristic(W, p).value
    assert base >= 1 - 1e-9
    assert ap_characteristic(W.scaled(c), p).value == pytest.approx(base, rel=1e-9)
    U, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((2, 2))
                        + 1j * np.random.default_rng(seed + 1).standard_normal((2, 2)))
    assert ap_characteristic(W.conjugated(U), p).value == pytest.approx(base, rel=1e-9)


def test_ap_report_csv(tmp_path):
    rep = ap_characteristic(generate_weight(WeightSpec("identity"), TorusGrid(1, 3), 1), 2.0)
    rep.write_csv(tmp_path / "ap.csv")
    lines = (tmp_path / "ap.csv").read_text().splitlines()
    assert lines[0] == "level,cube_index,bracket_value"
    assert len(lines) == 1 + sum(2 ** j for j in range(4))
    assert rep.argmax.level in range(4) and set(rep.per_level) == set(range(4))


def test_ap_overflow_error():
    g = TorusGrid(1, 4)
    vals = np.ones(g.shape)
    vals[3] = 1e-300
    W = MatrixWeightField(g, vals[..., None, None])
    with pytest.raises(FloatingPointError, match="overflow"), np.errstate(over="ignore"):
        ap_characteristic(W, 0.01)


@pytest.mark.parametrize("p", [1.0, 2.0, 3.0])
def test_scalar_ap_matches_second_implementation(p):
    g = TorusGrid(1, 8)
    w = g.distance_to(0.0)
    w[0] = 0.5 * g.spacing
    w = w ** 0.5
    assert scalar_ap_characteristic(w, g, p) == pytest.approx(brute_scalar_ap(w, p), rel=1e-12)


def test_scalar_ap_constants():
    g = TorusGrid(1, 5)
    assert scalar_ap_characteristic(np.ones(32), g, 2) == pytest.approx(1)
    assert scalar_ap_characteristic(np.full(32, 7.0), g, 1) == pytest.approx(1)
    w = np.ones(32)
    w[:4] = 0
    with pytest.raises(ValueError, match="degenerate weight"):
        scalar_ap_characteristic(w, g, 2)


def test_scalar_reduction_examples():
    g = TorusGrid(1, 4)
    assert np.allclose(scalar_reduction(generate_weight(WeightSpec("identity"), g, 2), 2, [1, 0]), 1)
    W = generate_weight(WeightSpec("diagonal_power", exponents=(0.5, -0.3)), g, 2)
    assert np.allclose(scalar_reduction(W, 2, [1, 0]), W.values[:, 0, 0])
    rot = generate_weight(WeightSpec("rotating", exponents=(0.5, -0.3), rate=1.0), g, 2)
    assert np.isfinite(scalar_ap_characteristic(scalar_reduction(rot, 2, [1, 0]), g, 2))
    with pytest.raises(ValueError):
        scalar_reduction(W, 2, [1, 1])


def test_norm_weight_field_examples():
    g = TorusGrid(1, 6)
    assert np.allclose(norm_weight_field(generate_weight(WeightSpec("identity"), g, 2), 3), 1)
    W0 = np.diag([4.0, 1.0])
    Wc = generate_weight(WeightSpec("constant", matrix=W0), g, 2)
    assert np.allclose(norm_weight_field(Wc, 2), 4.0)
    W = generate_weight(WeightSpec("diagonal_power", exponents=(0.5, -0.3)), g, 2)
    nw = scalar_ap_characteristic(norm_weight_field(W, 2), g, 2)
    comp = max(scalar_ap_characteristic(W.values[:, i, i], g, 2) for i in range(2))
    assert np.isfinite(nw) and nw <= 4 * comp


def test_duality_check():
    g = TorusGrid(1, 6)
    assert duality_check(generate_weight(WeightSpec("identity"), g, 2), 2) == pytest.approx((1, 1))
    W0 = random_spd(np.random.default_rng(0), 2)
    Wc = MatrixWeightField(g, np.broadcast_to(W0, g.shape + (2, 2)))
    assert duality_check(Wc, 2) == pytest.approx((1, 1), abs=1e-9)
    W = generate_weight(WeightSpec("diagonal_power", exponents=(0.5,)), g, 1)
    a, b = duality_check(W, 2)
    assert np.isfinite(a) and np.isfinite(b)
    # p = p' = 2 and the dual weight is w^{-1}: the scalar bracket is symmetric
    assert a == pytest.approx(b, rel=1e-9)


def brute_doubling(W, p, Z):
    g = W.grid
    B = W.power(1 / p)
    u = np.linalg.norm(np.einsum("...ab,db->...da", B, Z), axis=-1) ** p
    best = -np.inf
    for j in range(1, g.L):
        for cube in g.cubes(j):
            inner = u[cube.sample_slices(g)].reshape(-1, len(Z)).sum(axis=0)
            outer = u[double_cube_samples(cube, g)].sum(axis=0)
            best = max(best, np.log2(outer / inner).max())
    return best


@pytest.mark.parametrize("n,L", [(1, 6), (2, 4)])
def test_doubling_matches_brute_force(n, L):
    g = TorusGrid(n, L)
    W = random_smooth_weight(g, 2, seed=1, amplitude=2.0)
    Z = direction_set(2, 64, 0, complex_=True)
    assert doubling_exponent(W, 1.5) == pytest.approx(brute_doubling(W, 1.5, Z), rel=1e-12)


@pytest.mark.parametrize("n", [1, 2])
def test_doubling_identity_is_dimension(n):
    g = TorusGrid(n, 4)
    assert doubling_exponent(generate_weight(WeightSpec("identity"), g, 2), 0.7) == n
    W0 = random_spd(np.random.default_rng(4), 2)
    Wc = MatrixWeightField(g, np.broadcast_to(W0, g.shape + (2, 2)))
    assert doubling_exponent(Wc, 2) == pytest.approx(n, abs=1e-12)


def test_doubling_monotone_in_direction_set():
    W = generate_weight(WeightSpec("rotating", exponents=(0.8, -0.4), center=0.25, rate=2.0),
                        TorusGrid(1, 7), 2)
    small = doubling_exponent(W, 2, n_directions=16)
    large = doubling_exponent(W, 2, n_directions=128)
    assert large >= small


def test_doubling_ratios_bounded_by_exponent():
    W = random_smooth_weight(TorusGrid(1, 6), 2, seed=3)
    beta = doubling_exponent(W, 2)
    assert all(r.max() <= beta for r in doubling_ratios(W, 2).values())


def test_direction_set_prefix_and_unit():
    small, large = direction_set(3, 8, 1), direction_set(3, 32, 1)
    assert np.allclose(large[:11], small)
    assert np.allclose(np.linalg.norm(large, axis=1), 1)


def test_estimator_api():
    est = ApCharacteristic(p=3.0)
    assert clone(est).get_params() == {"p": 3.0, "j_min": 0}
    est.fit(generate_weight(WeightSpec("identity"), TorusGrid(1, 4), 2))
    assert est.value_ == pytest.approx(1)
