"""Quasimode ``u = lam^((n-1) delta/2) e^(i lam (x xi0 + w)) chi(t) sum_k phi_k lam^(-k rho)`` on a ``(t, x)`` grid.

The operator is ``P = D_t - r(t, x, D_x) + q0(t)`` with ``r`` quadratic in ``zeta = xi - lam xi0``
(one transversal dimension). Periodic grids in both ``t`` and ``x`` are used. ``chi`` vanishes
at the ends of the interval and the amplitude is compactly supported in ``x``.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import fft as sfft

from .eikonal import solve_eikonal
from .errors import ContractViolation, GridTooCoarse, LimitBicharError, PeriodizationError
from .normal_form import PreparedModel
from .transport import TransportSolution, solve_transport

NYQUIST_FACTOR = 4.0
BOX_FACTOR = 4.0
BOUNDARY_TOL = 1e-10
# the bump profile's spectrum decays like exp(-sqrt(2k)); 500 units of lam^delta still left a
# ~1e-12 tail near Nyquist that the xi factor in derivatives amplified, 1000 clears it
AMPLITUDE_BAND = 1000.0
EDGE_FRACTION = 0.02


@dataclass
class Quasimode:
    t: np.ndarray
    x: np.ndarray
    values: np.ndarray
    amplitude: np.ndarray  # chi * sum_k phi_k lam^(-k rho), no phase, no prefactor
    omega: np.ndarray
    omega_x: np.ndarray
    omega_xx: np.ndarray
    omega_t: np.ndarray
    lam: float
    prefactor: float
    M: int
    exponents: dict
    xi0: float
    support_radius: np.ndarray  # per time slice

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def dx(self) -> float:
        return float(self.x[1] - self.x[0])

    @property
    def nyquist(self) -> float:
        return math.pi / self.dx

    @property
    def period(self) -> float:
        return self.dt * self.t.size

    def phase(self) -> np.ndarray:
        return np.exp(1j * self.lam * (self.x[None, :] * self.xi0 + self.omega))

    def norm(self, field, s: float, **kw) -> float:
        """Sobolev norm of a field sampled on this grid."""
        return sobolev_norm(field, self.x, self.t, s, period=self.period, **kw)


def x_grid(lam: float, half_width: float, N_x: Optional[int] = None, amplitude_scale: float = 0.0) -> np.ndarray:
    """Periodic grid on ``[-half_width, half_width)`` with Nyquist at least ``4 lam``.

    With ``amplitude_scale`` (the reciprocal length of the amplitude) the default size also covers
    ``lam + AMPLITUDE_BAND * amplitude_scale``.
    """
    if N_x is None:
        target = max(NYQUIST_FACTOR * lam, lam + AMPLITUDE_BAND * amplitude_scale)
        need = int(math.ceil(2 * half_width * target / math.pi)) + 1
        N_x = sfft.next_fast_len(need)
    x = -half_width + 2 * half_width * np.arange(N_x) / N_x
    if math.pi / (x[1] - x[0]) < NYQUIST_FACTOR * lam * (1 - 1e-12):
        raise GridTooCoarse(f"Nyquist {math.pi / (x[1] - x[0]):.4g} below {NYQUIST_FACTOR:g} lambda = {NYQUIST_FACTOR * lam:.4g}")
    return x


def _omega_t(eikonal, t, x, a, b, h=1e-4):
    if t - 2 * h < a or t + 2 * h > b:
        sgn = 1.0 if t - 2 * h < a else -1.0
        w = [eikonal.omega(t + sgn * k * h, x) for k in range(5)]
        return sgn * (-25 * w[0] + 48 * w[1] - 36 * w[2] + 16 * w[3] - 3 * w[4]) / (12 * h)
    w = [eikonal.omega(t + k * h, x) for k in (-2, -1, 1, 2)]
    return (w[0] - 8 * w[1] + 8 * w[2] - w[3]) / (12 * h)


def assemble(
    prepared: PreparedModel,
    eikonal,
    transport: TransportSolution,
    lam: Optional[float] = None,
    N_x: Optional[int] = None,
) -> Quasimode:
    """Sample the quasimode on ``transport``'s time grid and a periodic ``x`` box of 4 support diameters."""
    if prepared.d != 1:
        raise ContractViolation("quasimode assembly is implemented for d = 1")
    lam = prepared.lam if lam is None else float(lam)
    if abs(lam - prepared.lam) > 1e-12 * lam:
        raise ContractViolation("lambda differs from the prepared model's lambda")
    if abs(prepared.delta - (1 + 2 * prepared.epsilon) / 3) > 1e-12 and not prepared.waive_exponents:
        raise ContractViolation("exponents inconsistent: delta must equal (1 + 2 eps)/3")
    t = transport.B.t
    st = transport.straightening
    Ys = np.array([st.Y(ti)[0, 0] for ti in t])
    r0 = lam ** (-prepared.delta)
    radius = r0 * np.abs(Ys)
    half = BOX_FACTOR * radius.max()
    x = x_grid(lam, half, N_x, amplitude_scale=1.0 / radius.min())
    Nt, Nx = t.size, x.size
    A = np.zeros((Nt, Nx), dtype=complex)
    W = np.zeros((Nt, Nx))
    W1 = np.zeros((Nt, Nx))
    W2 = np.zeros((Nt, Nx))
    Wt = np.zeros((Nt, Nx))
    chi = transport.chi(t)
    a, b = prepared.interval
    rho = prepared.rho
    for i, ti in enumerate(t):
        if chi[i] == 0:
            continue
        m = np.abs(x) < radius[i]
        xm = x[m]
        amp = transport.phi[0](ti, xm[:, None])
        for k, phik in enumerate(transport.phi[1:], start=1):
            amp = amp + lam ** (-k * rho) * phik.slice_at(i, xm)
        A[i, m] = chi[i] * amp
        if eikonal is not None and xm.size:
            W[i, m] = eikonal.omega(ti, xm)
            W1[i, m] = eikonal.grad_x_omega(ti, xm)
            W2[i, m] = eikonal.hess_x_omega(ti, xm)
            Wt[i, m] = _omega_t(eikonal, ti, xm, a, b)
    n = prepared.n
    pref = lam ** ((n - 1) * prepared.delta / 2)
    xi0 = float(prepared.xi0[0])
    u = pref * np.exp(1j * lam * (x[None, :] * xi0 + W)) * A
    exps = {"epsilon": prepared.epsilon, "delta": prepared.delta, "rho": prepared.rho, "kappa_exp": prepared.kappa_exp}
    return Quasimode(t, x, u, A, W, W1, W2, Wt, lam, pref, transport.M, exps, xi0, radius)


def check_boundary(field: np.ndarray, scale: Optional[float] = None, tol: float = BOUNDARY_TOL):
    f = np.abs(np.asarray(field))
    ref = f.max() if scale is None else scale
    if ref == 0:
        return
    k = max(1, int(EDGE_FRACTION * f.shape[-1]))
    edge = max(f[..., :k].max(), f[..., -k:].max())
    if edge > tol * ref:
        raise PeriodizationError(f"boundary mass {edge:.3g} exceeds {tol:g} x {ref:.3g}")


def sobolev_norm(
    field, x, t, s: float, scale: Optional[float] = None, check: bool = True, period: Optional[float] = None
) -> float:
    """``(int sum_xi <xi>^(2s) |F_x field|^2 dt)^(1/2)`` with the DFT in ``x`` and the trapezoid rule in ``t``.

    ``t`` may be ``None`` for a single slice. With ``period`` the ``t`` samples are a periodic grid
    and the closing interval back to ``t[0] + period`` is included.
    """
    f = np.atleast_2d(np.asarray(field, dtype=complex))
    if check:
        check_boundary(f, scale)
    x = np.asarray(x, dtype=float)
    dx = x[1] - x[0]
    N = x.size
    xi = 2 * np.pi * sfft.fftfreq(N, dx)
    w = (1 + xi**2) ** s
    F = sfft.fft(f, axis=-1)
    per_slice = dx / N * np.sum(w[None, :] * np.abs(F) ** 2, axis=-1)
    if t is None:
        total = per_slice[0]
    else:
        t = np.asarray(t, dtype=float)
        if period is not None:
            t = np.append(t, t[0] + period)
            per_slice = np.append(per_slice, per_slice[0])
        total = np.trapezoid(per_slice, t) if per_slice.size > 1 else per_slice[0]
    return float(np.sqrt(total))


def spectral_mass_near_ray(qm: Quasimode, halfwidth: float = 0.5) -> float:
    """Fraction of ``|F_x u|^2`` with ``|xi - lam xi0| <= halfwidth * lam``."""
    xi = 2 * np.pi * sfft.fftfreq(qm.x.size, qm.dx)
    F = np.abs(sfft.fft(qm.values, axis=-1)) ** 2
    near = np.abs(xi - qm.lam * qm.xi0) <= halfwidth * qm.lam
    return float(F[:, near].sum() / F.sum())


def _dt_spectral(f: np.ndarray, t: np.ndarray) -> np.ndarray:
    """``D_t = -i d_t`` on the periodic ``t`` grid."""
    h = t[1] - t[0]
    tau = 2 * np.pi * sfft.fftfreq(t.size, h)
    return sfft.ifft(tau[:, None] * sfft.fft(f, axis=0), axis=0)


def _dx_spectral(f: np.ndarray, x: np.ndarray, power: int = 1) -> np.ndarray:
    """``D_x^power`` on the periodic ``x`` grid."""
    xi = 2 * np.pi * sfft.fftfreq(x.size, x[1] - x[0])
    return sfft.ifft(xi[None, :] ** power * sfft.fft(f, axis=-1), axis=-1)


def _r_coeffs(prepared: PreparedModel, t: float, x: np.ndarray):
    return prepared.r_coefficients(t, x)


def _restrict_to_support(field: np.ndarray, qm: Quasimode) -> np.ndarray:
    # P is a differential operator, so supp Pu lies in supp u; what the FFT leaves
    # outside is rounding noise amplified by the spectral derivatives
    inside = np.abs(qm.x)[None, :] <= np.asarray(qm.support_radius)[:, None]
    return np.where(inside, field, 0)


def apply_operator(prepared: PreparedModel, qm: Quasimode, backend: str = "direct", order: int = 2) -> np.ndarray:
    """``P u`` with ``P = D_t - r(t, x, D_x) + q0(t)``.

    ``direct``: spectral ``D_t`` and the exact Kohn-Nirenberg quantization of the polynomial ``r``.
    ``expansion``: the transport expansion around the phase, to first or second order in ``D_x``.
    """
    t, x, lam = qm.t, qm.x, qm.lam
    q0 = np.asarray(prepared.q0(t), dtype=complex)
    if backend == "direct":
        u = qm.values
        out = _dt_spectral(u, t) + q0[:, None] * u
        xi = 2 * np.pi * sfft.fftfreq(x.size, qm.dx)
        zeta = xi - lam * qm.xi0
        U = sfft.fft(u, axis=-1)
        U1 = sfft.ifft(zeta[None, :] * U, axis=-1)
        U2 = sfft.ifft(zeta[None, :] ** 2 * U, axis=-1)
        for i, ti in enumerate(t):
            a0, a1, a2 = _r_coeffs(prepared, ti, x)
            out[i] -= a0 * u[i] + a1 * U1[i] + a2 * U2[i]
        return _restrict_to_support(out, qm)
    if backend == "expansion":
        if order not in (1, 2):
            raise ContractViolation("expansion order must be 1 or 2")
        A = qm.amplitude
        DA = _dx_spectral(A, x, 1)
        E = _dt_spectral(A, t) + q0[:, None] * A
        D2A = _dx_spectral(A, x, 2) if order == 2 else None
        for i, ti in enumerate(t):
            w1 = qm.omega_x[i][:, None]
            s = prepared.s(ti, x[:, None], w1)
            s_eta = prepared.ds_deta(ti, x[:, None], w1)[:, 0]
            E[i] += lam * (qm.omega_t[i] - s) * A[i] - s_eta * DA[i]
            if order == 2:
                a2 = 0.5 * float(np.squeeze(prepared.d2s_deta2(ti))) / lam
                E[i] += -a2 * D2A[i] + 1j * a2 * lam * qm.omega_xx[i] * A[i]
        return _restrict_to_support(qm.prefactor * qm.phase() * E, qm)
    raise ContractViolation(f"unknown backend {backend!r}")


# -- pipeline and sweep -----------------------------------------------------------

@dataclass
class LambdaResult:
    lam: float
    low_norm: float = float("nan")
    residual_norm: float = float("nan")
    l2_norm: float = float("nan")
    spectral_mass: float = float("nan")
    backend_gap: float = float("nan")
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


def build_quasimode(prepared: PreparedModel, M: int = 0, N_t: int = 512, N_y: int = 2048, cutoff_width=0.3, kappa=None, N_x=None):
    eik = solve_eikonal(prepared)
    tr = solve_transport(prepared, eik, M=M, N_t=N_t, N_y=N_y, cutoff_width=cutoff_width, kappa=kappa)
    return assemble(prepared, eik, tr, N_x=N_x), eik, tr


def run_lambda(
    prepared: PreparedModel,
    lam: float,
    N: float = 1.0,
    nu: float = 0.0,
    M: int = 0,
    N_t: int = 512,
    backend: str = "direct",
    compare: Optional[int] = None,
    cutoff_width=0.3,
) -> LambdaResult:
    res = LambdaResult(float(lam))
    try:
        P = prepared.with_lambda(lam)
        qm, _, _ = build_quasimode(P, M=M, N_t=N_t, cutoff_width=cutoff_width)
        Pu = apply_operator(P, qm, backend)
        scale = np.abs(qm.values).max()
        res.low_norm = qm.norm(qm.values, -N)
        res.l2_norm = qm.norm(qm.values, 0.0)
        res.residual_norm = qm.norm(Pu, nu, scale=scale)
        res.spectral_mass = spectral_mass_near_ray(qm)
        if compare is not None:
            other = apply_operator(P, qm, "expansion" if backend == "direct" else "direct", order=compare)
            res.backend_gap = qm.norm(other - Pu, 0.0, check=False) / res.l2_norm
    except LimitBicharError as exc:
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def _slope(lams, vals) -> float:
    return float(np.polyfit(np.log(lams), np.log(vals), 1)[0])


@dataclass
class DecayReport:
    lambdas: List[float]
    residual_norms: List[float]
    low_norms: List[float]
    l2_norms: List[float]
    spectral_mass: List[float]
    backend_gaps: List[float]
    errors: List[str]
    fitted_slopes: dict
    verdict: bool
    degenerate: bool
    tail_monotone: bool
    N: float
    nu: float
    M: int

    @property
    def ratios(self) -> List[float]:
        return [a / b if b > 0 else float("inf") for a, b in zip(self.low_norms, self.residual_norms)]

    def to_json(self) -> str:
        d = asdict(self)
        d["ratios"] = self.ratios
        return json.dumps(d, indent=2, sort_keys=True, allow_nan=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["lambda", "low_norm", "residual_norm", "ratio", "l2_norm", "spectral_mass", "error"])
        for row in zip(self.lambdas, self.low_norms, self.residual_norms, self.ratios, self.l2_norms, self.spectral_mass, self.errors):
            wr.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])
        return buf.getvalue()


def decay_fit(
    prepared: PreparedModel,
    lambdas: Sequence[float],
    N: float = 1.0,
    nu: float = 0.0,
    M: int = 0,
    N_t: int = 512,
    backend: str = "direct",
    compare: Optional[int] = None,
    workers: int = 1,
    cutoff_width=0.3,
    degenerate_tol: float = 1e-12,
) -> DecayReport:
    lams = [float(v) for v in lambdas]
    if lams != sorted(lams):
        raise ContractViolation("the lambda sweep must be sorted ascending")
    if len(lams) < 5 or lams[-1] / lams[0] < 100:
        raise ContractViolation("the sweep needs at least 5 values spanning 2 decades")
    args = [(prepared, lam, N, nu, M, N_t, backend, compare, cutoff_width) for lam in lams]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(run_lambda, *zip(*args)))
    else:
        results = [run_lambda(*a) for a in args]
    ok = [r for r in results if r.ok]
    if len(ok) < 4:
        raise ContractViolation(f"only {len(ok)} sweep points succeeded; the fit needs 4")
    L = np.array([r.lam for r in ok])
    low = np.array([r.low_norm for r in ok])
    resid = np.array([r.residual_norm for r in ok])
    degenerate = bool(np.all(resid <= degenerate_tol * np.array([r.l2_norm for r in ok])))
    slopes = {"low_norm": _slope(L, low)}
    if degenerate:
        slopes["residual_norm"] = float("-inf")
        slopes["ratio"] = float("inf")
    else:
        slopes["residual_norm"] = _slope(L, resid)
        slopes["ratio"] = _slope(L, low / resid)
    ratio = low / np.where(resid > 0, resid, np.finfo(float).tiny)
    tail = ratio[-4:]
    return DecayReport(
        lambdas=[r.lam for r in results],
        residual_norms=[r.residual_norm for r in results],
        low_norms=[r.low_norm for r in results],
        l2_norms=[r.l2_norm for r in results],
        spectral_mass=[r.spectral_mass for r in results],
        backend_gaps=[r.backend_gap for r in results],
        errors=[r.error for r in results],
        fitted_slopes=slopes,
        verdict=bool(slopes["ratio"] > 0),
        degenerate=degenerate,
        tail_monotone=bool(np.all(np.diff(tail) >= 0)),
        N=N,
        nu=nu,
        M=M,
    )
