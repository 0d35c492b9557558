import math

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from pln.dynsys import (HamiltonianSystem, check_commutation, check_independence, flow,
                        hamiltonian_vector_field, symplectic_matrix)
from pln.errors import IntegrationError
from pln.models import build_builtin
from pln.polynomial import Polynomial, action

TOL = 1e-12


def oscillator(omega):
    return HamiltonianSystem(1, [omega * action(2, 0, 1)], name="osc")


def test_field_of_harmonic_oscillator():
    sys_ = oscillator(1.0)
    assert np.allclose(hamiltonian_vector_field(sys_, 0, [1.0, 0.0]), [0.0, -1.0])


def test_field_of_constant_is_zero():
    sys_ = HamiltonianSystem(1, [Polynomial.constant(2, 3.0)])
    assert np.all(hamiltonian_vector_field(sys_, 0, [0.3, -0.2]) == 0)


def test_action_field_rotates_its_plane(t2):
    x = np.array([0.3, 0.5, 0.1, -0.7, 0.2, 0.4])
    X = hamiltonian_vector_field(t2.system, 0, x)
    assert np.allclose(X, [x[3], 0, 0, -x[0], 0, 0])


def test_field_index_checked():
    with pytest.raises(IndexError):
        oscillator(1.0).field(1, [0.0, 1.0])


def test_integral_count_validated():
    with pytest.raises(ValueError):
        HamiltonianSystem(1, [action(2, 0, 1), action(2, 0, 1)])


def test_null_flow_is_identity():
    sys_ = oscillator(1.7)
    x0 = np.array([0.4, -0.9])
    for c, t in (([0.0], 1.0), ([1.0], 0.0)):
        r = flow(sys_, c, x0, t, with_variational=True)
        assert np.array_equal(r.endpoint, x0)
        assert np.array_equal(r.fundamental_matrix, np.eye(2))


def test_full_period_returns():
    w = 1.7
    x0 = np.array([1.0, 0.5])
    r = flow(oscillator(w), [1.0], x0, 2 * math.pi / w, with_variational=True)
    assert np.linalg.norm(r.endpoint - x0) < 1e-10
    assert np.abs(r.fundamental_matrix - np.eye(2)).max() < 1e-10


def test_fundamental_matrix_is_rotation():
    w, t = 1.7, 0.9
    r = flow(oscillator(w), [1.0], [0.3, 0.2], t, with_variational=True)
    R = oracles.quadratic_flow_matrix(oracles.oscillator_hessian([w]), t)
    assert np.abs(r.fundamental_matrix - R).max() < 1e-10
    assert abs(np.linalg.det(r.fundamental_matrix) - 1) < 1e-10


def test_flow_matches_independent_integrator(t2p):
    sys_ = t2p.system
    x0 = np.array([0.4, 0.6, 0.3, 0.9, -0.2, 0.1])
    c = np.array([0.7, 1.3])

    def rhs(y):
        return c[0] * sys_.field(0, y) + c[1] * sys_.field(1, y)
    ref = oracles.scipy_flow(rhs, x0, 1.0)
    assert np.linalg.norm(flow(sys_, c, x0).endpoint - ref) < 1e-10


def test_flow_is_deterministic(t2p):
    x0 = np.array([0.4, 0.6, 0.3, 0.9, -0.2, 0.1])
    a = flow(t2p.system, [1.0, 2.0], x0, with_variational=True)
    b = flow(t2p.system, [1.0, 2.0], x0, with_variational=True)
    assert np.array_equal(a.endpoint, b.endpoint)
    assert np.array_equal(a.fundamental_matrix, b.fundamental_matrix)


def test_flow_validates_inputs():
    sys_ = oscillator(1.0)
    with pytest.raises(ValueError):
        flow(sys_, [1.0], [0.0, 1.0], t=math.inf)
    with pytest.raises(ValueError):
        flow(sys_, [1.0], [0.0, 1.0], tol=0.0)


def test_blow_up_raises_integration_error():
    # q' = p, p' = q^3 escapes to infinity in finite time
    F = 0.5 * Polynomial.variable(2, 1, 2) - 0.25 * Polynomial.variable(2, 0, 4)
    sys_ = HamiltonianSystem(1, [F])
    with pytest.raises(IntegrationError) as info:
        flow(sys_, [1.0], [1.0, 1.0], t=10.0)
    assert info.value.last_state is not None
    assert 0 < info.value.t_reached < 10


phase = st.lists(st.floats(-0.8, 0.8, allow_nan=False), min_size=6, max_size=6).map(np.array)
coeffs = st.lists(st.floats(-2, 2, allow_nan=False), min_size=2, max_size=2).map(np.array)


@settings(max_examples=15, deadline=None)
@given(phase, coeffs)
def test_integrals_conserved(x0, c):
    sys_ = build_builtin("T2-perturbed", grid=8).system
    r = flow(sys_, c, x0)
    scale = max(1.0, float(np.max(np.abs(x0))))
    assert np.max(np.abs(sys_.integral_values(r.endpoint) - sys_.integral_values(x0))) \
        <= 10 * TOL * scale ** 4


@settings(max_examples=10, deadline=None)
@given(phase, coeffs, st.floats(0.1, 0.9))
def test_group_property(x0, c, t1):
    sys_ = build_builtin("T2-perturbed", grid=8).system
    once = flow(sys_, c, x0, 1.0).endpoint
    twice = flow(sys_, c, flow(sys_, c, x0, t1).endpoint, 1.0 - t1).endpoint
    assert np.linalg.norm(once - twice) <= 10 * TOL * max(1.0, np.linalg.norm(x0))


@settings(max_examples=10, deadline=None)
@given(phase, coeffs, coeffs)
def test_flows_commute(x0, c1, c2):
    sys_ = build_builtin("T2-perturbed", grid=8).system
    a = flow(sys_, c1, flow(sys_, c2, x0).endpoint).endpoint
    b = flow(sys_, c2, flow(sys_, c1, x0).endpoint).endpoint
    assert np.linalg.norm(a - b) <= 10 * TOL * max(1.0, np.linalg.norm(x0))


@settings(max_examples=10, deadline=None)
@given(phase, coeffs)
def test_variational_matches_finite_differences(x0, c):
    sys_ = build_builtin("T2-perturbed", grid=8).system
    r = flow(sys_, c, x0, with_variational=True)
    h = 1e-6
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        col = (flow(sys_, c, x0 + e).endpoint - flow(sys_, c, x0 - e).endpoint) / (2 * h)
        ref = r.fundamental_matrix[:, j]
        assert np.linalg.norm(col - ref) <= 1e-5 * max(1.0, np.linalg.norm(ref))
    assert abs(np.linalg.det(r.fundamental_matrix) - 1) < 1e-9


def test_symplectic_matrix():
    J = symplectic_matrix(2)
    assert np.array_equal(J @ J, -np.eye(4))


def test_commutation_single_field_is_zero(t1):
    one = HamiltonianSystem(2, [t1.system.integrals[0]])
    assert check_commutation(one, t1.torus.flat_points()) == 0.0


def test_commutation_of_oscillator_model(t2p):
    rng = np.random.default_rng(3)
    pts = rng.uniform(-1, 1, size=(20, 6))
    assert check_commutation(t2p.system, pts) < 1e-10


def test_poisson_bracket_vanishes_symbolically():
    q = sp.symbols("q1:4")
    p = sp.symbols("p1:4")
    I1 = (q[0] ** 2 + p[0] ** 2) / 2
    I2 = (q[1] ** 2 + p[1] ** 2) / 2
    J = (q[2] ** 2 + p[2] ** 2) / 2
    H = I1 + 2 * I2 + sp.sqrt(3) * J + sp.Rational(1, 1000) * ((I1 - sp.Rational(1, 2)) * q[2]
                                                               + I2 * J + J ** 2)
    assert oracles.sympy_poisson(I1, H, q, p) == 0


def test_commutation_negative_control():
    bad = build_builtin("broken-commutation", grid=8)
    assert check_commutation(bad.system, bad.torus.flat_points()) > 0.1


def test_commutation_needs_points(t1):
    with pytest.raises(ValueError):
        check_commutation(t1.system, np.zeros((0, 4)))


def test_independence(t2):
    assert check_independence(t2.system, t2.torus.flat_points()) > 1e-3
    assert check_independence(t2.system, np.zeros(6)) == 0.0
    dup = HamiltonianSystem(3, [t2.system.integrals[0], t2.system.integrals[0]])
    assert check_independence(dup, t2.torus.flat_points()[:4]) < 1e-12
