"""Phase function from the eikonal equation ``d_t w = s(t, x, xi0 + d_x w)``, ``w(0, x) = 0``.

Characteristics start at ``(x0, 0)`` on a Chebyshev fan, and carry ``w`` along
with ``dw/dt = s - eta . d_eta s``. The first variation ``J = dx/dx0`` and
``Je = deta/dx0`` travel with them. ``w(t, .)`` is recovered by inverting
``x0 -> x(t; x0)`` on the Chebyshev interpolant.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numpy.polynomial import chebyshev as C
from scipy.integrate import solve_ivp

from .errors import CausticError, ContractViolation
from .normal_form import PreparedModel

FAN_POINTS = 33
JACOBIAN_FLOOR = 0.1
RTOL = 1e-12
ATOL = 1e-15


def domain_radius(prepared: PreparedModel, c: float = 1.0) -> float:
    return c * prepared.lam ** (-3 * prepared.epsilon)


def _rhs(prepared: PreparedModel, N: int):
    le = prepared.lam**prepared.epsilon

    def f(t, y):
        X, E, W, J, JE = y.reshape(5, N)
        K = prepared.K_at(t)[0, 0]
        B = prepared.B_at(t)[0, 0]
        Cs = le * prepared.Ct_at(t)[0, 0]
        c3 = le**2 * prepared.cubic_at(t)[0]
        s = 0.5 * K * X**2 + B * X * E + 0.5 * Cs * E**2 + c3 * X**3 / 6
        s_eta = B * X + Cs * E
        s_x = K * X + B * E + c3 * X**2 / 2
        dX = -s_eta
        dE = s_x
        dW = s - E * s_eta
        dJ = -(B * J + Cs * JE)
        dJE = (K + c3 * X) * J + B * JE
        return np.concatenate([dX, dE, dW, dJ, dJE])

    return f


@dataclass
class Fan:
    x0: np.ndarray
    t_max: float
    t_min: float
    sols: dict  # direction -> OdeSolution
    radius: float
    exited: np.ndarray = None

    @property
    def N(self) -> int:
        return self.x0.size

    def at(self, t: float) -> np.ndarray:
        """State block ``(X, E, W, J, JE)`` of shape ``(5, N)`` at time ``t``."""
        if t == 0:
            N = self.N
            return np.stack([self.x0, np.zeros(N), np.zeros(N), np.ones(N), np.zeros(N)])
        if not (self.t_min - 1e-12 <= t <= self.t_max + 1e-12):
            raise ContractViolation(f"t={t} outside the characteristic fan")
        sol = self.sols["+" if t > 0 else "-"]
        return np.asarray(sol(t)).reshape(5, self.N)


def chebyshev_nodes(radius: float, N: int = FAN_POINTS) -> np.ndarray:
    return radius * np.cos(np.pi * np.arange(N)[::-1] / (N - 1))


def solve_characteristics(
    prepared: PreparedModel,
    x0_grid: Optional[Sequence[float]] = None,
    c: float = 1.0,
    safety: float = 2.0,
    rtol: float = RTOL,
    atol: float = ATOL,
) -> Fan:
    """Integrate the Hamilton-Jacobi characteristics from ``(x0, 0)`` over the interval.

    The default fan is ``FAN_POINTS`` Chebyshev points on ``|x0| <= safety * c * lambda^(-3 eps)``.
    Characteristics leaving ``|x| <= 2 * safety * c * lambda^(-3 eps)`` are flagged in ``fan.exited``.
    """
    if prepared.d != 1:
        raise ContractViolation("the characteristic fan is implemented for one transversal dimension")
    a, b = prepared.interval
    if not a <= 0 <= b:
        raise ContractViolation("the interval must contain t = 0")
    R = safety * domain_radius(prepared, c)
    x0 = chebyshev_nodes(R) if x0_grid is None else np.asarray(x0_grid, dtype=float)
    N = x0.size
    y0 = np.concatenate([x0, np.zeros(N), np.zeros(N), np.ones(N), np.zeros(N)])
    f = _rhs(prepared, N)
    sols = {}
    scale = np.concatenate([np.full(N, R), np.full(N, R), np.full(N, R * R), np.ones(N), np.ones(N)])
    exited = np.zeros(N, dtype=bool)
    for key, end in (("+", b), ("-", a)):
        if end == 0:
            continue
        sol = solve_ivp(f, (0.0, end), y0, method="DOP853", rtol=rtol, atol=atol * scale, dense_output=True)
        if sol.status != 0:
            raise ContractViolation(f"characteristic integration failed: {sol.message}")
        sols[key] = sol.sol
        X = sol.y[:N]
        exited |= np.any(np.abs(X) > 2 * R, axis=1)
    return Fan(x0, b, a, sols, R, exited)


@dataclass
class EikonalSolution:
    fan: Fan
    prepared: PreparedModel
    radius: float
    cache: dict = field(default_factory=dict)

    def _slice(self, t: float):
        key = float(t)
        if key in self.cache:
            return self.cache[key]
        st = self.fan.at(key)
        X, E, W, J, JE = st
        if np.min(J) < JACOBIAN_FLOOR:
            i = int(np.argmin(J))
            raise CausticError(f"characteristic Jacobian {J[i]:.3g} below {JACOBIAN_FLOOR}", t=key, x0=float(self.fan.x0[i]))
        R = self.fan.radius
        u = self.fan.x0 / R
        deg = self.fan.N - 1
        cf = {name: C.chebfit(u, v, deg) for name, v in zip("XEWJQ", (X, E, W, J, JE))}
        out = (cf, X.min(), X.max())
        if len(self.cache) > 4096:
            self.cache.clear()
        self.cache[key] = out
        return out

    def _invert(self, t: float, x):
        cf, lo, hi = self._slice(t)
        x = np.asarray(x, dtype=float)
        if np.any(x < lo - 1e-14) or np.any(x > hi + 1e-14):
            raise ContractViolation(f"x outside the fan image [{lo:.3e}, {hi:.3e}] at t={t}")
        R = self.fan.radius
        nodes = self.fan.x0 / R
        Xn = C.chebval(nodes, cf["X"])
        u = np.interp(x, Xn, nodes)
        dX = C.chebder(cf["X"])
        for _ in range(30):
            g = C.chebval(u, cf["X"]) - x
            step = g / C.chebval(u, dX)
            u = u - step
            if np.max(np.abs(step), initial=0.0) <= 1e-15:
                break
        return u, cf

    def omega(self, t: float, x):
        u, cf = self._invert(t, x)
        return C.chebval(u, cf["W"])

    def grad_x_omega(self, t: float, x):
        u, cf = self._invert(t, x)
        return C.chebval(u, cf["E"])

    def hess_x_omega(self, t: float, x):
        u, cf = self._invert(t, x)
        return C.chebval(u, cf["Q"]) / C.chebval(u, cf["J"])

    def third_x_omega(self, t: float, x):
        """``d_x^3 w`` by differentiating ``JE / J`` along the fan."""
        u, cf = self._invert(t, x)
        Q, J = C.chebval(u, cf["Q"]), C.chebval(u, cf["J"])
        dQ, dJ = C.chebval(u, C.chebder(cf["Q"])), C.chebval(u, C.chebder(cf["J"]))
        dq_du = (dQ * J - Q * dJ) / J**2
        dx_du = C.chebval(u, C.chebder(cf["X"]))
        return dq_du / dx_du

    def dt_omega(self, t: float, x):
        """``d_t w = s(t, x, xi0 + d_x w)`` from the equation itself."""
        x = np.asarray(x, dtype=float)
        eta = self.grad_x_omega(t, x)
        return self.prepared.s(t, x[..., None], eta[..., None])

    def to_csv(self, ts, xs) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t", "x", "omega", "d_x_omega"])
        for t in ts:
            w = self.omega(t, xs)
            g = self.grad_x_omega(t, xs)
            for xv, wv, gv in zip(xs, w, g):
                wr.writerow([f"{t:.17g}", f"{xv:.17g}", f"{wv:.17g}", f"{gv:.17g}"])
        return buf.getvalue()


def reconstruct_omega(fan: Fan, prepared: PreparedModel, c: float = 1.0) -> EikonalSolution:
    """Wrap the fan as ``w(t, x)``; checks the Jacobian floor at the fan's own time steps."""
    for key, sol in fan.sols.items():
        for t in sol.ts:
            fan_state = fan.at(float(t))
            J = fan_state[3]
            if np.min(J) < JACOBIAN_FLOOR:
                i = int(np.argmin(J))
                raise CausticError(
                    f"characteristic Jacobian {J[i]:.3g} below {JACOBIAN_FLOOR}", t=float(t), x0=float(fan.x0[i])
                )
    return EikonalSolution(fan, prepared, domain_radius(prepared, c))


def solve_eikonal(prepared: PreparedModel, c: float = 1.0, safety: float = 2.0) -> EikonalSolution:
    return reconstruct_omega(solve_characteristics(prepared, c=c, safety=safety), prepared, c)


def eikonal_residual(prepared: PreparedModel, solution, ts, xs, h: float = 1e-3) -> float:
    """``max |d_t w - s(t, x, xi0 + d_x w)|`` with ``d_t w`` by fourth-order differences.

    ``solution`` needs ``omega(t, x)`` and ``grad_x_omega(t, x)``.
    """
    a, b = prepared.interval
    xs = np.asarray(xs, dtype=float)
    worst = 0.0
    for t in ts:
        if t - 2 * h < a or t + 2 * h > b:
            # one-sided stencil near the ends
            sgn = 1.0 if t - 2 * h < a else -1.0
            w = [solution.omega(t + sgn * k * h, xs) for k in range(5)]
            dt = sgn * (-25 * w[0] + 48 * w[1] - 36 * w[2] + 16 * w[3] - 3 * w[4]) / (12 * h)
        else:
            w = [solution.omega(t + k * h, xs) for k in (-2, -1, 1, 2)]
            dt = (w[0] - 8 * w[1] + 8 * w[2] - w[3]) / (12 * h)
        eta = solution.grad_x_omega(t, xs)
        s = prepared.s(t, xs[:, None], eta[:, None])
        worst = max(worst, float(np.max(np.abs(dt - s))))
    return worst
