"""Amplitudes for the quasimode: ``B' = q0``, the straightened transport field, ``phi_k`` and the time cutoff.

Conventions (one transversal dimension for the hierarchy, general ``d`` elsewhere):

* ``D = -i d``. The transport operator is ``T = D_t - (B x) D_x + q0``. In the
  variables ``y = Y(t)^{-1} x`` it is ``D_t + q0``.
* ``phi_0(t, x) = phi(lambda^delta y) exp(-i B(t))``.
* ``phi_k = exp(-i B) * i * lambda^(k rho) * int_0^t R_k``, with ``R_k`` sampled on a ``(t, y)`` grid.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Union

import numpy as np
from scipy import fft as sfft
from scipy.integrate import cumulative_simpson, solve_ivp
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .errors import ConditioningError, ContractViolation, CutoffPlacementError
from .normal_form import PreparedModel

COND_LIMIT = 1e6
CHI_C = 10.0
DEFAULT_CUTOFF_WIDTH = 0.3


# -- B(t) -------------------------------------------------------------------------

@dataclass
class BSamples:
    t: np.ndarray
    values: np.ndarray
    q0: np.ndarray
    _spline: CubicHermiteSpline = field(default=None, repr=False)

    def __post_init__(self):
        self._spline = CubicHermiteSpline(self.t, self.values, self.q0)

    def __call__(self, t):
        return self._spline(t)

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t", "re_B", "im_B"])
        for t, b in zip(self.t, self.values):
            wr.writerow([f"{t:.17g}", f"{b.real:.17g}", f"{b.imag:.17g}"])
        return buf.getvalue()


def zero_index(t: np.ndarray) -> int:
    t = np.asarray(t, dtype=float)
    i0 = int(np.argmin(np.abs(t)))
    if abs(t[i0]) > 1e-12 * max(1.0, np.ptp(t)):
        raise ContractViolation("the t-grid must contain t = 0")
    return i0


def _cumsimpson(f: np.ndarray, h: float) -> np.ndarray:
    if np.iscomplexobj(f):
        return _cumsimpson(f.real, h) + 1j * _cumsimpson(f.imag, h)
    if f.shape[0] == 2:
        return np.stack([np.zeros_like(f[0]), 0.5 * h * (f[0] + f[1])])
    return cumulative_simpson(f, dx=h, axis=0, initial=0)


def _antiderivative(t: np.ndarray, f: np.ndarray, axis: int = 0) -> np.ndarray:
    """Composite Simpson antiderivative along ``axis`` on a uniform grid, anchored at ``t = 0``."""
    i0 = zero_index(t)
    h = float(t[1] - t[0])
    f = np.moveaxis(np.asarray(f), axis, 0)
    out = np.zeros_like(f, dtype=np.result_type(f, float))
    if i0 < t.size - 1:
        out[i0:] = _cumsimpson(f[i0:], h)
    if i0 > 0:
        out[: i0 + 1] = -_cumsimpson(f[i0::-1], h)[::-1]
    return np.moveaxis(out, 0, axis)


def compute_B(t, q0_samples) -> BSamples:
    """``B(t) = int_0^t q0``; ``t`` uniform and containing 0."""
    t = np.asarray(t, dtype=float)
    q = np.asarray(q0_samples, dtype=complex)
    if t.ndim != 1 or t.size < 3 or q.shape != t.shape:
        raise ContractViolation("compute_B needs matching 1-d samples with at least 3 points")
    h = np.diff(t)
    if np.any(h <= 0) or np.ptp(h) > 1e-9 * h.mean():
        raise ContractViolation("the t-grid must be uniform and increasing")
    return BSamples(t, _antiderivative(t, q), q)


# -- straightening ----------------------------------------------------------------

@dataclass
class Straightening:
    """``x = Y(t) y`` with ``Y' = a(t) Y``, ``Y(0) = Id``."""

    d: int
    t_span: tuple
    sols: dict
    max_norm: float

    def Y(self, t) -> np.ndarray:
        t = float(t)
        if t == 0:
            return np.eye(self.d)
        a, b = self.t_span
        if not (a - 1e-12 <= t <= b + 1e-12):
            raise ContractViolation(f"t={t} outside the straightening interval")
        return np.asarray(self.sols["+" if t > 0 else "-"](t)).reshape(self.d, self.d)

    def Y_grid(self, ts) -> np.ndarray:
        return np.stack([self.Y(t) for t in ts])

    def Yinv(self, t) -> np.ndarray:
        return np.linalg.inv(self.Y(t))

    def to_x(self, t, y):
        return np.einsum("ij,...j->...i", self.Y(t), np.asarray(y, float))

    def to_y(self, t, x):
        return np.einsum("ij,...j->...i", self.Yinv(t), np.asarray(x, float))


def transport_matrix(prepared: PreparedModel) -> Callable:
    """``a(t)`` with rows ``a_j = -d_x d_xi_j s(t, 0, xi0)``; here ``-B(t)^T``."""
    return lambda t: -np.asarray(prepared.B_at(t), dtype=float).T


def straighten_Dp(a: Union[PreparedModel, Callable], t_span=None, d: Optional[int] = None) -> Straightening:
    if isinstance(a, PreparedModel):
        d = a.d
        t_span = a.interval if t_span is None else t_span
        a = transport_matrix(a)
    if t_span is None:
        raise ContractViolation("t_span is required with a coefficient callable")
    if d is None:
        d = np.atleast_2d(a(0.0)).shape[0]
    lo, hi = float(t_span[0]), float(t_span[1])
    if not lo <= 0 <= hi:
        raise ContractViolation("the straightening interval must contain t = 0")

    def f(t, y):
        return (np.atleast_2d(a(t)) @ y.reshape(d, d)).ravel()

    sols = {}
    worst = 1.0
    for key, end in (("+", hi), ("-", lo)):
        if end == 0:
            continue
        sol = solve_ivp(f, (0.0, end), np.eye(d).ravel(), method="DOP853", rtol=1e-12, atol=1e-14, dense_output=True)
        if sol.status != 0:
            raise ContractViolation(f"straightening integration failed: {sol.message}")
        for col in sol.y.T:
            Y = col.reshape(d, d)
            s = np.linalg.svd(Y, compute_uv=False)
            nrm = max(s[0], 1.0 / s[-1] if s[-1] > 0 else np.inf)
            if nrm > COND_LIMIT:
                raise ConditioningError(f"straightening matrix norm {nrm:.3g} exceeds {COND_LIMIT:g}")
            worst = max(worst, nrm)
        sols[key] = sol.sol
    return Straightening(d, (lo, hi), sols, worst)


# -- amplitudes -------------------------------------------------------------------

def bump(u):
    """``exp(1 - 1/(1 - |u|^2))`` on ``|u| < 1``, zero outside; ``u`` has trailing dimension ``d``."""
    u = np.asarray(u, dtype=float)
    r2 = np.sum(u * u, axis=-1)
    out = np.zeros_like(r2)
    m = r2 < 1
    out[m] = np.exp(1 - 1 / (1 - r2[m]))
    return out


def bump_grad(u):
    u = np.asarray(u, dtype=float)
    r2 = np.sum(u * u, axis=-1)
    out = np.zeros_like(u)
    m = r2 < 1
    g = np.exp(1 - 1 / (1 - r2[m])) * (-2 / (1 - r2[m]) ** 2)
    out[m] = g[..., None] * u[m]
    return out


@dataclass
class Phi0:
    B: Callable
    q0: Callable
    straightening: Straightening
    lam: float
    delta: float
    profile: Callable = bump
    profile_grad: Optional[Callable] = bump_grad

    @property
    def scale(self) -> float:
        return self.lam**self.delta

    def __call__(self, t, x):
        y = self.straightening.to_y(t, x)
        return self.profile(self.scale * y) * np.exp(-1j * self.B(t))

    def dt(self, t, x, a: Optional[Callable] = None):
        """``d_t phi_0`` at fixed ``x``; ``a(t)`` is the transport matrix."""
        if self.profile_grad is None:
            raise ContractViolation("the profile gradient is needed for d_t")
        y = self.straightening.to_y(t, x)
        Yi = self.straightening.Yinv(t)
        A = np.atleast_2d(a(t))
        # y = Y^{-1} x, dy/dt = -Y^{-1} A x = -Y^{-1} A Y y
        dy = -np.einsum("ij,...j->...i", Yi @ A @ self.straightening.Y(t), y)
        g = np.sum(self.profile_grad(self.scale * y) * dy, axis=-1) * self.scale
        e = np.exp(-1j * self.B(t))
        return (g - 1j * self.q0(t) * self.profile(self.scale * y)) * e


def solve_phi0(B: BSamples, prepared: PreparedModel, straightening: Optional[Straightening] = None, profile=bump, profile_grad=bump_grad) -> Phi0:
    st = straighten_Dp(prepared) if straightening is None else straightening
    return Phi0(B, prepared.q0, st, prepared.lam, prepared.delta, profile, profile_grad)


@dataclass
class GridAmplitude:
    """``phi_k`` sampled on a ``(t, y)`` grid; evaluation maps ``x`` to ``y`` through ``Y(t)``."""

    t: np.ndarray
    y: np.ndarray
    values: np.ndarray
    straightening: Optional[Straightening] = None
    k: int = 0

    def slice_at(self, i: int, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        yy = x if self.straightening is None else x / self.straightening.Y(self.t[i])[0, 0]
        out = np.zeros(yy.shape, dtype=complex)
        m = (yy >= self.y[0]) & (yy <= self.y[-1])
        out[m] = CubicSpline(self.y, self.values[i])(yy[m])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t", "y", "re_phi", "im_phi"])
        for i, t in enumerate(self.t):
            for yv, v in zip(self.y, self.values[i]):
                wr.writerow([f"{t:.17g}", f"{yv:.17g}", f"{v.real:.17g}", f"{v.imag:.17g}"])
        return buf.getvalue()


def solve_phik(B: BSamples, R_k, k: int, lam: float, rho: float = 0.1, y=None, straightening=None) -> GridAmplitude:
    """``phi_k = exp(-iB) * i * lambda^(k rho) * int_0^t R_k``, per ``y``-gridline."""
    R = np.asarray(R_k, dtype=complex)
    if R.shape[0] != B.t.size:
        raise ContractViolation("R_k must be sampled on the B time grid")
    inner = 1j * lam ** (k * rho) * _antiderivative(B.t, R, axis=0)
    vals = np.exp(-1j * B.values)[:, None] * inner
    yy = np.arange(R.shape[1], dtype=float) if y is None else np.asarray(y, float)
    return GridAmplitude(B.t, yy, vals, straightening, k)


# -- time cutoff ------------------------------------------------------------------

def _smoothstep(u):
    """C^infinity step: 0 for u <= 0, 1 for u >= 1; max slope 2 at u = 1/2."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0)
    out = np.zeros_like(u)
    out[u >= 1] = 1.0
    m = (u > 0) & (u < 1)
    f = np.exp(-1 / u[m])
    g = np.exp(-1 / (1 - u[m]))
    out[m] = f / (f + g)
    return out


def _smoothstep_d(u, order: int = 1):
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    m = (u > 0) & (u < 1)
    um = u[m]
    f = np.exp(-1 / um)
    g = np.exp(-1 / (1 - um))
    fp = f / um**2
    gp = g / (1 - um) ** 2
    if order == 1:
        out[m] = (fp * g + f * gp) / (f + g) ** 2
        return out
    raise ContractViolation("only the first derivative is provided analytically")


@dataclass
class Cutoff:
    interval: tuple
    width: float
    lam: float

    def __call__(self, t):
        a, b = self.interval
        t = np.asarray(t, dtype=float)
        return _smoothstep((t - a) / self.width) * _smoothstep((b - t) / self.width)

    def derivative(self, t):
        a, b = self.interval
        t = np.asarray(t, dtype=float)
        w = self.width
        l, r = (t - a) / w, (b - t) / w
        return (_smoothstep_d(l) * _smoothstep(r) - _smoothstep(l) * _smoothstep_d(r)) / w

    @property
    def derivative_bound(self) -> float:
        return 2.0 / self.width


@dataclass
class UnitCutoff:
    """``chi = 1`` on the whole interval. Only sensible when the amplitude is already periodic in ``t``."""

    interval: tuple

    def __call__(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def derivative(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    @property
    def derivative_bound(self) -> float:
        return 0.0


def cutoff_chi(interval, kappa: Optional[float], lam: float, width: Optional[float] = None, C: float = CHI_C) -> Cutoff:
    """Bump equal to 1 away from the endpoint intervals of length ``width`` (default ``kappa``)."""
    a, b = float(interval[0]), float(interval[1])
    w = kappa if width is None else width
    if w is None or not np.isfinite(w) or w <= 0:
        raise CutoffPlacementError("empty endpoint interval")
    if not (a + w <= 0 <= b - w):
        raise CutoffPlacementError(f"endpoint intervals of length {w:g} leave no room around t = 0 in [{a:g}, {b:g}]")
    if 2.0 / w > C * lam**0.2:
        raise CutoffPlacementError(f"transition width {w:g} too short for the bound {C:g} lambda^(1/5)")
    return Cutoff((a, b), float(w), float(lam))


# -- hierarchy --------------------------------------------------------------------

def time_grid(interval, N: int) -> np.ndarray:
    """Uniform periodic grid ``a + j (b - a)/N``, ``j < N``; contains 0 for symmetric intervals and even ``N``."""
    a, b = interval
    return a + (b - a) * np.arange(N) / N


def remainder_apply(prepared: PreparedModel, t: float, x, f, dx_f, dxx_f, w1, w2):
    """``R f = -lam^eps Ct w' D_x f + (i/2) lam^eps Ct w'' f + lam^eps Ct/(2 lam) d_x^2 f`` (``d = 1``)."""
    Cs = prepared.lam**prepared.epsilon * float(np.squeeze(prepared.Ct_at(t)))
    return -Cs * w1 * (-1j * dx_f) + 0.5j * Cs * w2 * f + Cs / (2 * prepared.lam) * dxx_f


@dataclass
class TransportSolution:
    B: BSamples
    phi: List  # phi0 evaluator then GridAmplitude objects
    chi: Cutoff
    M: int
    straightening: Straightening
    y: Optional[np.ndarray] = None
    support_radius: float = 0.0

    def phi_k_csv(self, k: int) -> str:
        if k == 0:
            t = self.B.t
            y = self.y
            vals = np.stack([self.phi[0](ti, self.straightening.Y(ti)[0, 0] * y[:, None]) for ti in t])
            return GridAmplitude(t, y, vals).to_csv()
        return self.phi[k].to_csv()


def solve_transport(
    prepared: PreparedModel,
    eikonal=None,
    t: Optional[np.ndarray] = None,
    M: int = 0,
    N_t: int = 512,
    N_y: int = 2048,
    cutoff_width: Optional[float] = DEFAULT_CUTOFF_WIDTH,
    kappa: Optional[float] = None,
) -> TransportSolution:
    """Build ``B``, ``phi_0 .. phi_M`` and ``chi``. Corrections need ``eikonal`` when ``M > 0``."""
    t = time_grid(prepared.interval, N_t) if t is None else np.asarray(t, dtype=float)
    B = compute_B(t, prepared.q0(t) * np.ones_like(t, dtype=complex))
    st = straighten_Dp(prepared)
    phi0 = solve_phi0(B, prepared, st)
    if cutoff_width == 0:
        chi = UnitCutoff(prepared.interval)
    else:
        chi = cutoff_chi(prepared.interval, kappa, prepared.lam, width=cutoff_width)
    ymax = prepared.lam ** (-prepared.delta)
    L = 4 * ymax
    y = -L + 2 * L * np.arange(N_y) / N_y
    phis: list = [phi0]
    if M > 0:
        if prepared.d != 1:
            raise ContractViolation("the correction hierarchy is implemented for d = 1")
        if eikonal is None:
            raise ContractViolation("corrections need the eikonal solution")
        k_y = 2 * np.pi * sfft.fftfreq(N_y, y[1] - y[0])
        Ys = np.array([st.Y(ti)[0, 0] for ti in t])
        prev = np.stack([phi0(ti, Ys[i] * y[:, None]) for i, ti in enumerate(t)])
        for k in range(1, M + 1):
            S = np.zeros_like(prev)
            for i, ti in enumerate(t):
                f = prev[i]
                if not np.any(f):
                    continue
                F = sfft.fft(f)
                fy = sfft.ifft(1j * k_y * F)
                fyy = sfft.ifft(-(k_y**2) * F)
                x = Ys[i] * y
                m = np.abs(y) <= ymax
                w1 = np.zeros_like(x)
                w2 = np.zeros_like(x)
                w1[m] = eikonal.grad_x_omega(ti, x[m])
                w2[m] = eikonal.hess_x_omega(ti, x[m])
                # R is a differential operator: the source keeps the support of f
                S[i] = np.where(m, -prepared.lam**prepared.rho * remainder_apply(
                    prepared, ti, x, f, fy / Ys[i], fyy / Ys[i] ** 2, w1, w2
                ), 0)
            Rk = np.exp(1j * B.values)[:, None] * S / prepared.lam ** (k * prepared.rho)
            amp = solve_phik(B, Rk, k, prepared.lam, prepared.rho, y=y, straightening=st)
            phis.append(amp)
            prev = amp.values
    return TransportSolution(B, phis, chi, M, st, y, ymax * st.max_norm)
