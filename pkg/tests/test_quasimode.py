import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from limitbichar.errors import ContractViolation, GridTooCoarse, PeriodizationError
from limitbichar.normal_form import PreparedModel
from limitbichar.quasimode import (
    Quasimode,
    apply_operator,
    assemble,
    build_quasimode,
    decay_fit,
    sobolev_norm,
    spectral_mass_near_ray,
    x_grid,
)


def prepared(lam, **kw):
    return PreparedModel(d=1, lam=float(lam), **kw)


def dispersive(lam):
    return prepared(lam, B=0.3, Ct=0.5, cubic=1.0, q0_coefs=[0, -1j])


def manual_qm(t, x, values, lam):
    z = np.zeros(values.shape)
    return Quasimode(t, x, values, values, z, z, z, z, float(lam), 1.0, 0, {}, 1.0, np.full(t.size, np.inf))


# -- assemble -----------------------------------------------------------------------

def test_u_at_origin_is_prefactor():
    P = prepared(256, B=0.3, cubic=1.0, q0_coefs=[0, -1j])
    qm, eik, tr = build_quasimode(P, M=0, N_t=128)
    # even N_x puts x = 0 on the grid
    qm = assemble(P, eik, tr, N_x=qm.x.size + qm.x.size % 2)
    i, j = qm.t.size // 2, qm.x.size // 2
    assert qm.t[i] == 0 and qm.x[j] == 0
    assert qm.prefactor == pytest.approx(256**0.2)
    assert abs(qm.values[i, j] - qm.prefactor) <= 1e-12 * qm.prefactor


def test_l2_norm_lambda_independent_without_phase():
    # omega = 0, M = 0, q0 = 0, chi = 1: u = lam^(1/5) e^(i lam x) bump(lam^(2/5) x)
    a, b = -1.0, 1.0
    oracle = np.sqrt((b - a) * quad(lambda y: np.exp(2 - 2 / (1 - y * y)), -1, 1, epsabs=1e-14)[0])
    norms = []
    for lam in 2.0 ** np.arange(7, 13):
        qm, _, _ = build_quasimode(prepared(lam), M=0, N_t=64, cutoff_width=0)
        assert np.abs(qm.omega).max() == 0
        norms.append(qm.norm(qm.values, 0.0))
    assert np.abs(np.array(norms) / oracle - 1).max() <= 1e-6


def test_grid_too_coarse():
    with pytest.raises(GridTooCoarse):
        x_grid(100.0, 1.0, N_x=64)
    x = x_grid(100.0, 1.0)
    assert np.pi / (x[1] - x[0]) >= 400


def test_assemble_rejects_inconsistent_lambda():
    P = prepared(128, B=0.3)
    qm, eik, tr = build_quasimode(P, N_t=64)
    with pytest.raises(ContractViolation):
        assemble(P, eik, tr, lam=256.0)


def test_support_and_nyquist_invariants():
    P = prepared(512, B=0.3, cubic=1.0, q0_coefs=[0, -1j])
    qm, _, _ = build_quasimode(P, N_t=128)
    assert qm.nyquist >= 4 * qm.lam
    outside = np.abs(qm.x)[None, :] > qm.support_radius[:, None]
    assert np.all(qm.values[outside] == 0)
    assert qm.support_radius.max() <= 2 * 512 ** (-0.4)


def test_adding_a_correction_is_bounded_by_its_size():
    lam = 512.0
    P = dispersive(lam)
    q1, eik, tr2 = build_quasimode(P, M=2, N_t=128)
    # same grid, amplitude truncated at M = 1
    tr1 = type(tr2)(tr2.B, tr2.phi[:2], tr2.chi, 1, tr2.straightening, tr2.y, tr2.support_radius)
    u1 = assemble(P, eik, tr1, N_x=q1.x.size)
    diff = np.abs(q1.amplitude - u1.amplitude).max()
    top = max(np.abs(tr2.phi[2].values).max(), 1e-300)
    assert diff <= lam ** (-2 * P.rho) * top * (1 + 1e-9)
    assert diff > 0


# -- sobolev_norm -------------------------------------------------------------------

def _grid(L=2.0, N=1024):
    return -L + 2 * L * np.arange(N) / N


def test_plancherel():
    rng = np.random.default_rng(3)
    x = _grid()
    t = np.linspace(0, 1, 9)
    env = np.exp(-(x / 0.2) ** 2)
    f = (rng.normal(size=(9, 1)) + 1j * rng.normal(size=(9, 1))) * env * np.cos(7 * x)
    direct = np.sqrt(np.trapezoid(np.sum(np.abs(f) ** 2, axis=1) * (x[1] - x[0]), t))
    assert sobolev_norm(f, x, t, 0.0) == pytest.approx(direct, rel=1e-10)


def test_periodic_time_grid_closes_the_interval():
    x = _grid(N=256)
    f = np.exp(-(x / 0.2) ** 2)[None, :] * np.ones((8, 1))
    t = -1 + 2 * np.arange(8) / 8
    full = sobolev_norm(f, x, None, 0.0) * np.sqrt(2.0)
    assert sobolev_norm(f, x, t, 0.0, period=2.0) == pytest.approx(full, rel=1e-14)
    assert sobolev_norm(f, x, t, 0.0) == pytest.approx(full * np.sqrt(7 / 8), rel=1e-14)


@pytest.mark.parametrize("lam", [64.0, 128.0, 512.0])
def test_modulated_negative_norm(lam):
    x = _grid(N=4096)
    phi = np.exp(-(x / 0.1) ** 2)
    u = np.exp(1j * lam * x) * phi
    ref = sobolev_norm(phi, x, None, 0.0) / lam
    assert sobolev_norm(u, x, None, -1.0) == pytest.approx(ref, rel=0.05)


@given(st.floats(-3, 3), st.floats(0, 3), st.integers(0, 20))
@settings(max_examples=40, deadline=None)
def test_norm_monotone_in_s(s1, gap, k):
    x = _grid(N=256)
    f = np.exp(-(x / 0.3) ** 2) * np.exp(1j * k * x)
    assert sobolev_norm(f, x, None, s1) <= sobolev_norm(f, x, None, s1 + gap) * (1 + 1e-12)


def test_periodization_error():
    x = _grid(N=256)
    with pytest.raises(PeriodizationError):
        sobolev_norm(np.exp(-(x / 1.5) ** 2), x, None, 0.0)
    # a scale supplied by the caller is used as the reference
    f = 1e-9 * np.ones_like(x)
    with pytest.raises(PeriodizationError):
        sobolev_norm(f, x, None, 0.0, scale=1.0)
    assert sobolev_norm(f, x, None, 0.0, check=False) > 0


# -- apply_operator -----------------------------------------------------------------

def test_direct_backend_tau_only():
    lam = 64.0
    t = -1 + 2 * np.arange(64) / 64
    x = _grid(L=1.0, N=2048)
    g = np.exp(-(x[None, :] / 0.1) ** 2) * (1 + 0.5 * np.sin(np.pi * t[:, None]))
    Dtg = -1j * 0.5 * np.pi * np.cos(np.pi * t[:, None]) * np.exp(-(x[None, :] / 0.1) ** 2)
    e = np.exp(1j * lam * x)[None, :]
    qm = manual_qm(t, x, e * g, lam)
    Pu = apply_operator(prepared(lam), qm, "direct")
    assert np.abs(Pu - e * Dtg).max() <= 1e-8


def test_direct_backend_multiplier_only():
    lam = 64.0
    Ct = 0.5
    P = prepared(lam, Ct=Ct)
    t = -1 + 2 * np.arange(16) / 16
    x = _grid(L=1.0, N=1024)
    k = np.pi * 75  # a grid frequency of the box [-1, 1)
    u = np.exp(1j * k * x)[None, :] * np.ones((t.size, 1))
    Pu = apply_operator(P, manual_qm(t, x, u, lam), "direct")
    m = 0.5 * lam**P.epsilon * Ct / lam * (k - lam) ** 2
    assert np.abs(Pu + m * u).max() <= 1e-11 * m


def test_second_order_expansion_matches_direct():
    # r is quadratic in the frequency, so the second-order expansion is exact
    P = dispersive(1024.0)
    qm, _, _ = build_quasimode(P, M=0, N_t=256)
    d = apply_operator(P, qm, "direct")
    e = apply_operator(P, qm, "expansion", order=2)
    assert qm.norm(d - e, 0.0, check=False) <= 1e-5 * qm.norm(qm.values, 0.0)


def test_first_order_gap_follows_dispersive_term():
    P = dispersive(256.0)
    qm, _, _ = build_quasimode(P, M=0, N_t=256)
    d = apply_operator(P, qm, "direct")
    e1 = apply_operator(P, qm, "expansion", order=1)
    e2 = apply_operator(P, qm, "expansion", order=2)
    # the order-1 backend misses exactly the order-2 terms
    gap1 = qm.norm(d - e1, 0.0, check=False)
    miss = qm.norm(e2 - e1, 0.0, check=False)
    assert gap1 == pytest.approx(miss, rel=1e-4)


def test_unknown_backend():
    P = prepared(128, B=0.3)
    qm, _, _ = build_quasimode(P, N_t=64)
    with pytest.raises(ContractViolation):
        apply_operator(P, qm, "fast")
    with pytest.raises(ContractViolation):
        apply_operator(P, qm, "expansion", order=3)


def test_frequency_localization():
    P = prepared(1024.0, B=0.3, cubic=1.0, q0_coefs=[0, -1j])
    qm, _, _ = build_quasimode(P, N_t=128)
    assert spectral_mass_near_ray(qm) >= 1 - 1e-4


# -- decay_fit ----------------------------------------------------------------------

def test_decay_fit_contracts():
    P = prepared(128, B=0.3)
    with pytest.raises(ContractViolation):
        decay_fit(P, [256, 128, 512, 1024, 2048, 40000])
    with pytest.raises(ContractViolation):
        decay_fit(P, [128, 256, 512, 1024])
    with pytest.raises(ContractViolation):
        decay_fit(P, [128, 160, 200, 256, 300])


def test_trivial_operator_is_degenerate():
    # p = tau, q0 = 0, chi = 1: phi_0 is independent of t and P u vanishes up to rounding
    lams = [2.0**k for k in range(7, 15)]
    rep = decay_fit(prepared(128), lams, M=0, N_t=32, cutoff_width=0)
    assert not any(rep.errors)
    assert rep.degenerate
    assert rep.verdict
    assert max(r / l for r, l in zip(rep.residual_norms, rep.l2_norms)) <= 1e-12


def test_sweep_failures_are_recorded():
    # the smallest lambda cannot host the cutoff; the failure is recorded and skipped
    P = dispersive(128)
    lams = [1.0, 128.0, 256.0, 512.0, 1024.0, 2048.0]
    rep = decay_fit(P, lams, M=0, N_t=128, cutoff_width=0.1)
    assert rep.errors[0]
    assert np.isnan(rep.low_norms[0])
    assert all(not e for e in rep.errors[1:])
    csv = rep.to_csv().splitlines()
    assert csv[0] == "lambda,low_norm,residual_norm,ratio,l2_norm,spectral_mass,error"
    assert len(csv) == 1 + len(lams)


# -- invariants over the sweep --------------------------------------------------------

@pytest.mark.slow
def test_l2_normalization_across_sweep():
    # real phase and a lambda-independent q0: the prefactor offsets the shrinking support
    norms = []
    for lam in 2.0 ** np.arange(7, 15):
        qm, _, _ = build_quasimode(dispersive(lam), M=0, N_t=256)
        norms.append(qm.norm(qm.values, 0.0))
    norms = np.array(norms)
    assert norms.max() / norms.min() - 1 <= 0.02


def _reported_norms(P, M, refine):
    qm, eik, tr = build_quasimode(P, M=M, N_t=512 * refine, N_y=2048 * refine)
    if refine > 1:
        coarse = assemble(P, eik, tr)
        qm = assemble(P, eik, tr, N_x=refine * coarse.x.size)
    Pu = apply_operator(P, qm, "direct")
    return np.array([qm.norm(qm.values, -1.0), qm.norm(qm.values, 0.0), qm.norm(Pu, 0.0, scale=np.abs(qm.values).max())])


CANONICAL = dict(B=0.3, cubic=1.0, q0_coefs=[0, -4.6j], q0_log_power=1.25)


@pytest.mark.slow
@pytest.mark.parametrize(
    "lam",
    [
        128.0,
        1024.0,
        pytest.param(
            16384.0,
            marks=pytest.mark.xfail(
                reason="residual is ~1e-10 of |u| here; FFT rounding amplified by D_x dominates and grows with N_x",
                strict=False,
            ),
        ),
    ],
)
def test_grid_convergence(lam):
    P = prepared(lam, **CANONICAL)
    a = _reported_norms(P, 3, 1)
    b = _reported_norms(P, 3, 2)
    assert np.abs(b / a - 1).max() < 1e-3
