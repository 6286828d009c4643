import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from limitbichar.bichar_flow import Bicharacteristic, integrate_bicharacteristic
from limitbichar.errors import ContractViolation, NormalizationDegenerate
from limitbichar.families import polynomial_symbol, product_of_principal_type, quadratic_hyperbolic
from limitbichar.limit_diagnostics import (
    Direction,
    Verdict,
    cond2_integral,
    curvature_bound,
    family_report,
    kappa_min,
    sign_change_detect,
)
from limitbichar.symbol_model import fd_jacobian, hamilton_field


def tau_model(scale=1.0, p0=None):
    # p = scale*tau, p0 given as table rows over (t, x, tau, xi)
    return polynomial_symbol(2, [[0, 0, 1, 0, scale]], p0, homogeneity_degree=1, name="tau")


def tau_curve(model, T):
    return integrate_bicharacteristic(model, [-T, 0, 0, 1.0], 2 * T)


def test_kappa_examples():
    m = tau_model()
    assert kappa_min(m, tau_curve(m, 1.0)) == pytest.approx(1.0)
    q = quadratic_hyperbolic(mu=(), n_free=1, q2="neg_eta1_sq")  # xi^2 - eta^2
    a = 0.3
    c = integrate_bicharacteristic(q, [0, 0, a, a], 1.0)
    assert kappa_min(q, c) == pytest.approx(2 * np.hypot(a, a))  # |H| = |(2 xi, -2 eta)|
    cprod = 0.6
    pr = product_of_principal_type([[0, 0, 0, 0, 1, 0], [0, 0, 0, 0, 0, 1]])
    c = integrate_bicharacteristic(pr, [0, 0, 0, np.sqrt(1 - cprod**2), 0, cprod], 0.5)
    assert kappa_min(pr, c) == pytest.approx(cprod)


def test_kappa_quadratic_refinement():
    # |H_p| = |(1, 2(t - 0.313))| sampled coarsely: refinement beats the raw minimum
    m = polynomial_symbol(2, [[0, 0, 1, 0, 1.0], [1, 0, 0, 0, 0.0]], name="tau")
    curve = Bicharacteristic(np.zeros((5, 4)), np.linspace(0, 1, 5))
    k = kappa_min(m, curve)
    assert k == pytest.approx(1.0)


def test_cond2_examples():
    T = 2.0
    m = tau_model(p0=[[1, 0, 0, 0, [0.0, 1.0]]])  # Im p0 = t
    c = tau_curve(m, T)
    val, w = cond2_integral(m, c, kappa=np.exp(-10))
    assert val == pytest.approx(0.2, rel=1e-10)
    assert abs(w[0]) < 1e-12
    val, _ = cond2_integral(m, c, kappa=np.exp(-3))
    assert val == pytest.approx(T**2 / 2 / 3, rel=1e-10)
    zero = tau_model()
    assert cond2_integral(zero, tau_curve(zero, T), kappa=0.5)[0] == 0.0
    with pytest.raises(NormalizationDegenerate):
        cond2_integral(m, c, kappa=1 - 1e-8)


def test_cond2_rejects_closed_curves():
    r0 = 1.0
    harm = polynomial_symbol(2, [[0, 2, 0, 0, 0.5], [0, 0, 0, 2, 0.5], [0, 0, 0, 0, -0.5]])
    c = integrate_bicharacteristic(harm, [0, r0, 0, 0], 2 * np.pi)
    with pytest.raises(ContractViolation):
        cond2_integral(harm, c, kappa=0.5)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.05, 20.0))
def test_cond2_scaling_invariance(c):
    rows = [[1, 0, 0, 0, [0.0, 1.0]], [2, 0, 0, 0, [0.0, 0.3]]]
    m = tau_model(p0=rows)
    ms = tau_model(scale=c, p0=[[*r[:4], [0.0, c * r[4][1]]] for r in rows])
    curve = tau_curve(m, 1.5)
    a = cond2_integral(m, curve, kappa=0.1)[0]
    b = cond2_integral(ms, curve, kappa=0.1)[0]
    assert abs(a - b) <= 1e-10 * max(1.0, abs(a))


def test_sign_change_examples():
    m = tau_model()
    c = tau_curve(m, 1.0)
    for rows, expect in [
        ([[1, 0, 0, 0, [0.0, 1.0]]], Direction.MINUS_TO_PLUS),
        ([[1, 0, 0, 0, [0.0, -1.0]]], Direction.PLUS_TO_MINUS),
        ([[2, 0, 0, 0, [0.0, 1.0]]], None),
    ]:
        res = sign_change_detect(tau_model(p0=rows), c)
        if expect is None:
            assert res is None
        else:
            assert res.direction is expect
            assert res.s == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=5, max_size=30))
def test_sign_change_flips_under_negation(vals):
    v = np.array(vals)
    curve = Bicharacteristic(np.zeros((v.size, 4)), np.arange(v.size, dtype=float))
    m = tau_model()
    a = sign_change_detect(m, curve, values=v)
    b = sign_change_detect(m, curve, values=-v)
    assert (a is None) == (b is None)
    if a is not None:
        assert a.s == b.s and a.direction != b.direction


def test_curvature_bound_linear_symbol():
    m = tau_model()
    c = tau_curve(m, 1.0)
    plane = np.array([[1, 0], [0, 1], [0, 0], [0, 0]], float)
    assert curvature_bound(m, c, [plane] * len(c)) == 0.0
    with pytest.raises(ContractViolation):
        curvature_bound(m, c, None)


def test_curvature_bound_cross_hessian():
    alpha = 0.7
    m = polynomial_symbol(2, [[0, 0, 1, 0, 1.0], [0, 1, 0, 1, -alpha]], name="tau-axi")
    c = integrate_bicharacteristic(m, [0, 0, 0, 1.0], 1.0)
    plane = np.array([[1, 0], [0, 1], [0, 0], [0, 0]], float)
    got = curvature_bound(m, c, [plane] * len(c))
    # finite-difference oracle
    ref = 0.0
    for w in c.samples:
        g = hamilton_field(m, w)
        g = np.concatenate([-g[2:], g[:2]])  # gradient from the Hamilton field
        hess = fd_jacobian(lambda v: np.array([0, -alpha * v[3], 1, -alpha * v[1]]), w)
        u = g / np.linalg.norm(g)
        proj = (np.eye(4) - np.outer(u, u)) @ hess @ plane
        ref = max(ref, np.linalg.norm(proj, 2) / np.linalg.norm(g))
    assert got == pytest.approx(ref, rel=1e-8)
    assert got == pytest.approx(alpha / np.sqrt(1 + alpha**2), rel=1e-8)


def test_curvature_grows_like_inverse_radius_for_elliptic_part():
    mu = 1.0
    q = quadratic_hyperbolic(mu=[mu], n_free=0, q2="neg_eta1_sq")  # base (x, y), fiber (xi, eta)
    rs = 0.1 * 2.0 ** -np.arange(5)
    vals = []
    for r in rs:
        c = integrate_bicharacteristic(q, [r, 0, 0, np.sqrt(mu) * r], 0.5)

        def sec(w):
            h = hamilton_field(q, w)
            return np.stack([h, [0, 1, 0, 0]], 1)

        vals.append(curvature_bound(q, c, sec))
    slope = np.polyfit(np.log(rs), np.log(vals), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.02)


def _synthetic_family(sign=1.0, scale_j=True, J=6, T=2.0):
    models, curves = [], []
    for j in range(1, J + 1):
        k = np.exp(-j)
        amp = sign * k * (j**2 if scale_j else 1.0)
        m = polynomial_symbol(2, [[0, 0, 1, 0, k]], [[1, 0, 0, 0, [0.0, amp]]], homogeneity_degree=1)
        c = integrate_bicharacteristic(m, [-T, 0, 0, 1.0], 2 * T, family_index=j)
        models.append(m)
        curves.append(c)
    return models, curves


def test_family_witness_and_serialization():
    models, curves = _synthetic_family()
    rep = family_report(models, curves, eps=0.1)
    assert rep.verdict is Verdict.WITNESS, rep.reasons
    assert rep.cond2_slope == pytest.approx(2.0, rel=1e-8)  # j^2 * T^2/2 / j
    kap = [d.kappa for d in rep.diagnostics]
    assert np.allclose(kap, np.exp(-np.arange(1, 7)))
    assert rep.diagnostics[0].lam == pytest.approx(np.exp(1) ** 10)
    data = json.loads(rep.to_json())
    assert data["verdict"] == "NonSolvabilityWitness" and len(data["curves"]) == 6
    assert len(rep.to_csv().splitlines()) == 7


def test_family_without_subprincipal_part_is_no_witness():
    models, curves = _synthetic_family(sign=0.0)
    assert family_report(models, curves, eps=0.1).verdict is Verdict.NO_WITNESS


def test_family_y1eta1_ck_bounds_blow_up():
    mu0 = 1.0
    q = quadratic_hyperbolic(mu=(), n_free=1, q2="mu0_y1_eta1", mu0=mu0)  # xi^2 + y eta
    curves = []
    for j in range(5):
        lam = 0.2 * 2.0 ** -j
        w = np.array([0.0, -lam, lam, lam])
        curves.append(integrate_bicharacteristic(q, w, 0.3, family_index=j))
    rep = family_report(q, curves, eps=0.1)
    assert rep.verdict is Verdict.NO_WITNESS
    assert any("C^k bound" in r for r in rep.reasons)
    ck1 = [d.ck_bounds[0] for d in rep.diagnostics]
    assert ck1[-1] > 10 * ck1[0]
