import numpy as np
import pytest
import sympy as sp

from limitbichar.bichar_flow import (
    Bicharacteristic,
    curves_to_csv,
    derivative_along_flow,
    flow_field,
    integrate_bicharacteristic,
    reparametrize,
    unit_normal,
)
from limitbichar.errors import ContractViolation
from limitbichar.families import (
    polynomial_symbol,
    product_of_principal_type,
    quadratic_hyperbolic,
    tau_minus_r,
)
from limitbichar.polynomial import Polynomial
from limitbichar.symbol_model import PhasePoint, eval_principal

R0 = 1.5
HARMONIC = polynomial_symbol(2, [[0, 2, 0, 0, 0.5], [0, 0, 0, 2, 0.5], [0, 0, 0, 0, -R0**2 / 2]], name="harmonic")
TAU = polynomial_symbol(2, [[0, 0, 1, 0, 1.0]], homogeneity_degree=1, name="tau")
XI1XI2 = product_of_principal_type([[0, 0, 0, 0, 1, 0], [0, 0, 0, 0, 0, 1]])


def test_tau_line_is_straight_segment():
    c = integrate_bicharacteristic(TAU, PhasePoint(0, [0], 0, [1.0]), 1.0)
    assert not c.truncated
    assert c.arc_params[-1] == pytest.approx(1.0)
    expected = np.stack([c.arc_params, 0 * c.arc_params, 0 * c.arc_params, 1 + 0 * c.arc_params], 1)
    assert np.allclose(c.samples, expected, atol=1e-12)


def test_harmonic_circle_closes_after_its_period():
    c = integrate_bicharacteristic(HARMONIC, [0, R0, 0, 0], 2 * np.pi * R0)
    assert np.allclose(c.samples[-1], c.samples[0], atol=1e-9)
    rad = np.hypot(c.samples[:, 1], c.samples[:, 3])
    assert np.abs(rad - R0).max() < 1e-10
    # analytic solution: (x, xi) = R0 (cos(s/R0), -sin(s/R0))
    s = c.arc_params
    assert np.allclose(c.samples[:, 1], R0 * np.cos(s / R0), atol=1e-8)
    assert np.allclose(c.samples[:, 3], -R0 * np.sin(s / R0), atol=1e-8)


def test_mendoza_uhlmann_lines():
    c = integrate_bicharacteristic(XI1XI2, [0, 0, 0, 0, 0, 1.0], 1.0)
    # base moves along x1 only, fiber frozen
    assert np.allclose(c.samples[:, 1], c.arc_params, atol=1e-12)
    assert np.allclose(c.samples[:, [0, 2]], 0, atol=1e-12)
    assert np.allclose(c.samples[:, 3:], [0, 0, 1], atol=1e-12)


def test_start_off_characteristic_set():
    with pytest.raises(ContractViolation):
        integrate_bicharacteristic(TAU, [0, 0, 0.5, 1.0], 1.0)


def test_truncation_when_field_degenerates():
    # p = tau - x^2/2... use Q = xi^2 - x^2 (hyperbolic point): flow runs into the origin
    m = polynomial_symbol(2, [[0, 0, 0, 2, 1.0], [0, 2, 0, 0, -1.0]], name="saddle")
    m = m.with_options(degeneracy_threshold=1e-3)
    c = integrate_bicharacteristic(m, [0, 1.0, 0, -1.0], 5.0)
    assert c.truncated
    assert c.length < 5.0


def _builtin_curves():
    q1 = quadratic_hyperbolic(mu=[1.0], n_free=1, q2="neg_eta1_sq")
    q3 = quadratic_hyperbolic(mu=(), n_free=0, q2="eta1_eta2_minus_y2_sq")
    r = Polynomial.from_terms({(0, 3, 0, 0): 0.4, (1, 1, 0, 1): -0.7, (0, 0, 0, 2): 0.2}, 4)
    trm = tau_minus_r(2, r)
    w = np.array([0.1, 0.3, 0.0, 0.5])
    w[2] = float(r(w))
    y2 = np.sqrt(2 * 0.3 * 0.4)
    return [
        (TAU, [0, 0, 0, 1.0]),
        (HARMONIC, [0, R0, 0, 0]),
        (XI1XI2, [0, 0, 0, 0, 0, 1.0]),
        (q1, [0, 0.2, 0.1, 0.3, 0.4, 0.5]),  # x,xi1 then free, eta: mu(x^2+xi^2)+xi_f^2 = eta^2
        (q3, [0.0, y2, 0.3, 0.4]),
        (trm, w),
    ]


def _fix_q1_start(model, w):
    w = np.array(w, float)
    if model.name == "quadratic[neg_eta1_sq]":
        q1 = w[0] ** 2 + w[3] ** 2 + w[4] ** 2
        w[5] = np.sqrt(q1)
    return w


@pytest.mark.parametrize("case", range(6))
def test_energy_conservation_and_unit_speed(case):
    model, w = _builtin_curves()[case]
    w = _fix_q1_start(model, w)
    c = integrate_bicharacteristic(model, w, 1.0)
    p = np.array([eval_principal(model, v) for v in c.samples])
    assert np.abs(p - p[0]).max() <= 1e-8
    if model.homogeneity_degree is not None:
        assert np.abs(np.linalg.norm(c.samples[:, model.dim:], axis=1) - 1).max() <= 1e-8
    # divided differences on a fine resampled window
    s = np.linspace(0.2, 0.2 + 1e-4, 5)
    fine = reparametrize(c, s, model)
    speed = np.linalg.norm(np.diff(fine.samples, axis=0), axis=1) / np.diff(s)
    assert np.abs(speed - 1).max() <= 1e-6


@pytest.mark.parametrize("case", range(6))
def test_time_reversal(case):
    model, w = _builtin_curves()[case]
    w = _fix_q1_start(model, w)
    fwd = integrate_bicharacteristic(model, w, 1.0)
    back = integrate_bicharacteristic(model, fwd.samples[-1], 1.0, orientation=-1)
    assert np.abs(back.samples[-1] - fwd.samples[0]).max() <= 1e-7


def test_reparametrize_identity_and_subsamples():
    c = integrate_bicharacteristic(TAU, [0, 0, 0, 1.0], 1.0)
    same = reparametrize(c, c.arc_params, TAU)
    assert np.array_equal(same.samples, c.samples)
    half = reparametrize(c, np.linspace(0, 1, 11), TAU)
    assert np.allclose(half.samples[:, 0], np.linspace(0, 1, 11), atol=1e-13)
    with pytest.raises(ContractViolation):
        reparametrize(c, [0.5, 1.5])


def test_reparametrize_circle_stays_on_level_set():
    c = integrate_bicharacteristic(HARMONIC, [0, R0, 0, 0], 2 * np.pi * R0)
    grid = np.linspace(0, c.arc_params[-1], 4 * len(c))
    fine = reparametrize(c, grid, HARMONIC)
    assert max(abs(eval_principal(HARMONIC, w)) for w in fine.samples) <= 1e-7
    # Hermite interpolation alone (no projection) is already accurate
    raw = reparametrize(c, grid, HARMONIC, project_back=False)
    assert max(abs(eval_principal(HARMONIC, w)) for w in raw.samples) <= 1e-7


def test_derivatives_along_tau_flow_vanish():
    c = integrate_bicharacteristic(TAU, [0, 0, 0, 1.0], 1.0)
    for k in range(1, 5):
        assert np.abs(derivative_along_flow(TAU, c, unit_normal(TAU), k)).max() < 1e-12
    with pytest.raises(ContractViolation):
        derivative_along_flow(TAU, c, unit_normal(TAU), 5)


def test_circle_curvature():
    c = integrate_bicharacteristic(HARMONIC, [0, R0, 0, 0], 2.0)
    acc = derivative_along_flow(HARMONIC, c, lambda w: w[[1, 3]], 2)
    assert np.allclose(np.linalg.norm(acc, axis=1), 1 / R0, rtol=1e-7)


def _q2_oracle():
    y1, y2, e1, e2 = sp.symbols("y1 y2 e1 e2", real=True)
    v = [y1, y2, e1, e2]
    q = 2 * e1 * e2 - y2**2
    g = [sp.diff(q, s) for s in v]
    ng = sp.sqrt(sum(gi**2 for gi in g))
    h = [g[2] / ng, g[3] / ng, -g[0] / ng, -g[1] / ng]
    d = lambda f: sum(hi * sp.diff(f, s) for hi, s in zip(h, v))
    return sp.lambdify(v, [d(d(gi / ng)) for gi in g])


def test_q2_eta1eta2_growth_matches_symbolic_oracle():
    model = quadratic_hyperbolic(mu=(), n_free=0, q2="eta1_eta2_minus_y2_sq")
    oracle = _q2_oracle()
    e1 = 1e-6
    e2s = 0.1 * 2.0 ** -np.arange(5)
    mags = []
    for e2 in e2s:
        w = np.array([0.0, np.sqrt(2 * e1 * e2), e1, e2])
        c = integrate_bicharacteristic(model, w, 0.05)
        got = derivative_along_flow(model, c, unit_normal(model), 2)[0]
        ref = np.array(oracle(*w), dtype=float)
        assert np.linalg.norm(got - ref) <= 1e-2 * np.linalg.norm(ref)
        mags.append(np.linalg.norm(got))
    slope = np.polyfit(np.log(e2s), np.log(mags), 1)[0]
    # unbounded growth as eta2 -> 0 at fixed eta1 (symbolic exponent -7/2)
    assert slope == pytest.approx(-3.5, abs=0.05)


def test_csv_columns():
    c = integrate_bicharacteristic(XI1XI2, [0, 0, 0, 0, 0, 1.0], 0.1)
    text = curves_to_csv([c], XI1XI2)
    head = text.splitlines()[0].split(",")
    assert head == ["j", "s", "t", "x1", "x2", "tau", "xi1", "xi2", "p", "abs_Hp"]
    assert len(text.splitlines()) == len(c) + 1


def test_bicharacteristic_rejects_nonmonotone_params():
    with pytest.raises(ContractViolation):
        Bicharacteristic(np.zeros((2, 4)), [0.0, 0.0])
