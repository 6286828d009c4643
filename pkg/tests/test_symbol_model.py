import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from limitbichar.errors import ContractViolation, DegenerateHamiltonField
from limitbichar.families import (
    polynomial_symbol,
    product_of_principal_type,
    quadratic_hyperbolic,
    root_symbol,
    tau_minus_r,
)
from limitbichar.polynomial import Polynomial
from limitbichar.symbol_model import (
    PhasePoint,
    eval_principal,
    fd_gradient,
    fd_jacobian,
    hamilton_field,
    homogeneous_distance,
    homogeneous_gradient_norm,
    normalized_hamilton_field,
)

TAU = polynomial_symbol(2, [[0, 0, 1, 0, 1.0]], name="tau")
TAU2 = polynomial_symbol(2, [[0, 0, 1, 0, 2.0]])
TAUXI = polynomial_symbol(2, [[0, 0, 1, 1, 1.0]])  # tau*xi, the xi1*xi2 model
XSQ = polynomial_symbol(2, [[0, 2, 0, 0, 1.0]])  # x^2, critical on x = 0
HARMONIC = polynomial_symbol(2, [[0, 2, 0, 0, 0.5], [0, 0, 0, 2, 0.5]])


def test_phase_point_roundtrip():
    w = PhasePoint(0.5, [1.0, 2.0], -1.0, [3.0, 4.0])
    assert w.dim == 3
    assert np.array_equal(PhasePoint.from_array(w.as_array()).as_array(), w.as_array())
    with pytest.raises(ContractViolation):
        PhasePoint(0.0, [1.0], 0.0, [1.0, 2.0])


def test_eval_principal_examples():
    assert eval_principal(TAU, PhasePoint(0, [0], 1, [0.7])) == 1.0
    q = quadratic_hyperbolic(mu=[1.0], n_free=0, q2="neg_eta1_sq")
    # base (x1, y1), fiber (xi1, eta1)
    assert eval_principal(q, [0.0, 5.3, 0.0, 2.0]) == pytest.approx(-4.0)
    # root symbol w1^2 - w2^2 with w1 = t, w2 = x
    a = Polynomial.from_terms({(0, 2, 0, 0): 1.0}, 4)
    root = root_symbol(2, a, 0)
    assert eval_principal(root, [3.0, 2.0, 0.0, 0.0]) == pytest.approx(5.0)


def test_dimension_mismatch():
    with pytest.raises(ContractViolation):
        eval_principal(TAU, np.zeros(6))


def test_hamilton_field_examples():
    assert np.allclose(hamilton_field(TAU, [0.3, 0.1, 0.0, 1.0]), [1, 0, 0, 0])
    h = hamilton_field(HARMONIC, [0.0, 0.0, 0.0, 1.0])
    assert np.allclose(h[[1, 3]], [1.0, 0.0])  # (xi, -x)
    a, b = 0.7, -1.3
    h = hamilton_field(TAUXI, [0, 0, a, b])
    assert np.allclose(h[:2], [b, a]) and np.allclose(h[2:], 0)


def test_normalized_field_examples():
    assert np.allclose(normalized_hamilton_field(TAU, [0, 0, 0, 1]), [1, 0, 0, 0])
    assert np.allclose(normalized_hamilton_field(TAU2, [0, 0, 0, 1]), [1, 0, 0, 0])
    assert np.allclose(normalized_hamilton_field(TAUXI, [0, 0, 3, 4]), [0.8, 0.6, 0, 0])
    with pytest.raises(DegenerateHamiltonField):
        normalized_hamilton_field(TAUXI, [0, 0, 0, 0])


def test_homogeneous_gradient_norm_examples():
    assert homogeneous_gradient_norm(TAU, [0, 0, 1, 0]) == pytest.approx(1.0)
    assert homogeneous_gradient_norm(TAUXI, [0, 0, 3, 4]) == pytest.approx(5.0)
    assert homogeneous_gradient_norm(XSQ, [0, 0, 0.6, 0.8]) == 0.0
    with pytest.raises(ContractViolation):
        homogeneous_gradient_norm(TAU, [0, 0, 0, 0])


def test_fiber_norm_switch():
    # p = t*tau: base gradient (tau, 0); with |xi| only the weight changes
    m = polynomial_symbol(2, [[1, 0, 1, 0, 1.0]])
    w = [0.0, 0.0, 0.6, 0.8]
    full = homogeneous_gradient_norm(m, w)
    xi_only = homogeneous_gradient_norm(m.with_options(fiber_norm_mode="xi"), w)
    assert full == pytest.approx(0.6)
    assert xi_only == pytest.approx(0.6 / 0.8)


def test_homogeneous_distance_examples():
    xi0 = np.array([0.0, 1.0])
    ray = (np.array([0.0, 0.0]), xi0)
    assert homogeneous_distance([0, 0, 0, 3.0], ray) == 0.0
    assert homogeneous_distance([0, 0.25, 0, 1.0], ray) == pytest.approx(0.25, rel=1e-8)
    lam, delta = 1e4, 0.05
    w = [0, 0, lam * delta, lam]  # fiber lam*xi0 + lam*delta*xi_perp
    # optimal ray parameter gives delta / sqrt(1 + delta^2), which is delta to O(delta^2)
    assert homogeneous_distance(w, ray) == pytest.approx(delta / np.hypot(1, delta), rel=1e-6)
    assert homogeneous_distance([0, 0, 1e-3, 1.0], ray) > 0


def _builtins():
    q_cases = [quadratic_hyperbolic(mu=[1.3], n_free=1, q2=c) for c in
               ("neg_eta1_sq", "mu0_y1_eta1", "eta1_eta2_minus_y2_sq")]
    prod = product_of_principal_type([[0, 0, 0, 1, 0, 0], [0, 0, 0, 0, 1, 0]])
    a = Polynomial.from_terms({(0, 2, 0, 0): 1.0, (1, 1, 0, 1): 0.3}, 4)
    root = root_symbol(3, a, 2)
    r = Polynomial.from_terms({(0, 3, 0, 0): 0.4, (1, 1, 0, 1): -0.7, (0, 0, 0, 2): 0.2}, 4)
    return q_cases + [prod, root, tau_minus_r(2, r), HARMONIC]


@pytest.mark.parametrize("model", _builtins(), ids=lambda m: m.name)
def test_analytic_derivatives_match_finite_differences(model):
    rng = np.random.default_rng(7)
    for _ in range(100):
        w = rng.uniform(-1, 1, 2 * model.dim)
        g = model.gradient(w)
        h = model.hessian(w)
        scale_g = max(1.0, np.abs(g).max())
        scale_h = max(1.0, np.abs(h).max())
        assert np.max(np.abs(fd_gradient(model.p, w) - g)) <= 1e-6 * scale_g
        assert np.max(np.abs(fd_jacobian(model.gradient, w) - h)) <= 1e-6 * scale_h
        t3 = model.third_derivatives(w)
        assert np.max(np.abs(fd_jacobian(model.hessian, w) - t3)) <= 1e-6 * max(1.0, np.abs(t3).max())


def test_finite_difference_fallback_without_analytic_derivatives():
    m = TAUXI.with_options(grad=None, hess=None, third=None)
    w = np.array([0.1, 0.2, 0.3, 0.4])
    assert np.allclose(m.gradient(w), TAUXI.gradient(w), atol=1e-9)
    assert np.allclose(m.hessian(w), TAUXI.hessian(w), atol=1e-5)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-2, 2), min_size=4, max_size=4),
    st.floats(0.1, 10.0),
)
def test_hamilton_field_linearity_and_direction_invariance(w, c):
    w = np.array(w)
    model = _builtins()[3]  # product, 3-dim
    w6 = np.concatenate([w[:2], [0.5], w[2:], [0.3]])
    h = hamilton_field(model, w6)
    hs = hamilton_field(model.scaled(c), w6)
    assert np.allclose(hs, c * h, atol=1e-12 * max(1, c * np.abs(h).max()))
    if np.linalg.norm(h) > 1e-6:
        u = normalized_hamilton_field(model, w6)
        assert abs(np.linalg.norm(u) - 1) <= 1e-12
        assert np.allclose(normalized_hamilton_field(model.scaled(c), w6), u, atol=1e-12)
