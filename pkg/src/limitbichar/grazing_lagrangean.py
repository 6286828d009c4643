"""Grazing Lagrangean sections: matrix Riccati propagation in graph charts.

A section is ``L(t) = {(y, A(t) y)}`` in the transversal ``(y, eta)`` variables.
With ``K = d_x^2 r``, ``B = d_x d_xi r`` and ``Cm = d_xi^2 r`` the linearized
Hamilton flow of ``tau - r`` is ``y' = -(B^T y + Cm eta)``, ``eta' = K y + B eta``,
and graphs of this flow solve ``A' = K + B A + A B^T + A Cm A``.

When ``A`` grows large the plane is re-graphed after flipping some coordinate
pairs ``(y_i, eta_i) -> (eta_i, -y_i)``; the chart is the set of flipped
coordinates, stored as a bit mask.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from itertools import combinations
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import subspace_angles

from .errors import ContractViolation, InternalInvariantFailure

THRESHOLD = 1e3
RTOL = 1e-12
ATOL = 1e-12


def sym(F):
    return 0.5 * (F + F.T)


@dataclass
class QuadraticCoefficients:
    """Matrix-valued functions ``Axx(t), Axxi(t), Axixi(t)`` of the quadratic part of ``r``."""

    Axx: Callable[[float], np.ndarray]
    Axxi: Callable[[float], np.ndarray]
    Axixi: Callable[[float], np.ndarray]
    m: int = 1

    @classmethod
    def constant(cls, K, B=None, Cm=None):
        K = np.atleast_2d(np.asarray(K, dtype=float))
        m = K.shape[0]
        B = np.zeros((m, m)) if B is None else np.atleast_2d(np.asarray(B, dtype=float))
        Cm = np.zeros((m, m)) if Cm is None else np.atleast_2d(np.asarray(Cm, dtype=float))
        return cls(lambda t: K, lambda t: B, lambda t: Cm, m)

    @classmethod
    def from_functions(cls, K, B, Cm, m: int):
        f = lambda g: (lambda t: np.atleast_2d(np.asarray(g(t), dtype=float)))
        return cls(f(K), f(B), f(Cm), m)

    def at(self, t: float):
        K, B, Cm = self.Axx(t), self.Axxi(t), self.Axixi(t)
        if K.shape != (self.m, self.m) or B.shape != K.shape or Cm.shape != K.shape:
            raise ContractViolation("coefficient matrices have inconsistent shapes")
        return K, B, Cm

    def flow_matrix(self, t: float) -> np.ndarray:
        """Generator ``M`` of the linearized flow ``z' = M z`` with ``z = (y, eta)``."""
        K, B, Cm = self.at(t)
        return np.block([[-B.T, -Cm], [K, B]])


def flip_matrix(chart: int, m: int) -> np.ndarray:
    """Symplectic ``R`` with ``(y_i, eta_i) -> (eta_i, -y_i)`` for the bits set in ``chart``."""
    R = np.eye(2 * m)
    for i in range(m):
        if chart >> i & 1:
            R[i, i] = R[m + i, m + i] = 0.0
            R[i, m + i] = 1.0
            R[m + i, i] = -1.0
    return R


def chart_coefficients(M: np.ndarray, chart: int):
    """``(K, B, Cm)`` of the flow generator expressed in ``chart``."""
    m = M.shape[0] // 2
    R = flip_matrix(chart, m)
    Mc = R @ M @ R.T
    return Mc[m:, :m], Mc[m:, m:], -Mc[:m, m:]


@dataclass
class RiccatiState:
    A: np.ndarray
    chart: int = 0
    t: float = 0.0

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if self.A.shape[0] != self.A.shape[1]:
            raise ContractViolation("A must be square")

    @property
    def m(self) -> int:
        return self.A.shape[0]

    def basis(self) -> np.ndarray:
        """``2m x m`` spanning matrix of the plane in the original ``(y, eta)`` coordinates."""
        return flip_matrix(self.chart, self.m).T @ np.vstack([np.eye(self.m), self.A])


def riccati_rhs(coeffs: QuadraticCoefficients, state: RiccatiState, chart_aware: bool = True) -> np.ndarray:
    """``K + 2 sym(B A) + A Cm A`` in the state's chart."""
    A = state.A
    if A.shape[0] != coeffs.m:
        raise ContractViolation(f"A is {A.shape[0]}x{A.shape[0]} but coefficients are {coeffs.m}x{coeffs.m}")
    if state.chart and chart_aware:
        K, B, Cm = chart_coefficients(coeffs.flow_matrix(state.t), state.chart)
    else:
        K, B, Cm = coeffs.at(state.t)
    return K + 2 * sym(B @ A) + A @ Cm @ A


def _graph_in(basis: np.ndarray, chart: int):
    m = basis.shape[1]
    z = flip_matrix(chart, m) @ basis
    X, Y = z[:m], z[m:]
    s = np.linalg.svd(X, compute_uv=False)
    if s[-1] <= 1e-12 * max(s[0], 1.0):
        return None
    return sym(np.linalg.solve(X.T, Y.T).T)


def chart_switch(state: RiccatiState, max_subsets: int = 4096) -> RiccatiState:
    """Re-graph the plane in the chart (among single flips of coordinate subsets) with smallest slope.

    Returns the input when no chart lowers ``||A||``.
    """
    m = state.m
    B = state.basis()
    cur = np.linalg.norm(state.A, 2)
    best, best_norm = None, cur
    tried = 0
    for size in range(1, m + 1):
        for sub in combinations(range(m), size):
            tried += 1
            if tried > max_subsets:
                break
            toggle = sum(1 << i for i in sub)
            chart = state.chart ^ toggle
            An = _graph_in(B, chart)
            if An is None:
                continue
            nn = np.linalg.norm(An, 2)
            if nn < best_norm * (1 - 1e-12):
                best, best_norm = RiccatiState(An, chart, state.t), nn
    if best is None:
        if not np.all(np.isfinite(state.A)):
            raise InternalInvariantFailure("plane is not graphable in any chart")
        return state
    return best


@dataclass
class _Segment:
    t0: float
    t1: float
    chart: int
    sol: object  # OdeSolution or constant matrix
    m: int

    def A(self, t):
        if callable(self.sol):
            a = np.asarray(self.sol(t)).reshape(self.m, self.m)
        else:
            a = self.sol
        return sym(a)


@dataclass
class RiccatiTrajectory:
    segments: List[_Segment]
    times: np.ndarray
    A_values: List[np.ndarray]
    charts: List[int]
    switches: List[float] = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.segments[0].m

    @property
    def t_span(self):
        return self.segments[0].t0, self.segments[-1].t1

    @classmethod
    def constant(cls, A, t_span, chart: int = 0):
        A = np.atleast_2d(np.asarray(A, dtype=float))
        seg = _Segment(t_span[0], t_span[1], chart, A, A.shape[0])
        ts = np.array(t_span, dtype=float)
        return cls([seg], ts, [A, A], [chart, chart])

    def _segment(self, t) -> _Segment:
        lo, hi = self.t_span
        if not (min(lo, hi) - 1e-12 <= t <= max(lo, hi) + 1e-12):
            raise ContractViolation(f"t={t} outside trajectory span {self.t_span}")
        fwd = hi >= lo
        for seg in self.segments:
            if (seg.t0 <= t <= seg.t1) if fwd else (seg.t1 <= t <= seg.t0):
                return seg
        return self.segments[-1]

    def state(self, t) -> RiccatiState:
        seg = self._segment(t)
        return RiccatiState(seg.A(t), seg.chart, t)

    def plane(self, t) -> np.ndarray:
        return self.state(t).basis()

    def final(self) -> RiccatiState:
        return self.state(self.t_span[1])

    def full_bases(self, times) -> List[np.ndarray]:
        """Spanning ``2n x n`` matrices of ``{(s, y; 0, A y)}`` in ``(t, x; tau, xi)`` coordinates."""
        m = self.m
        out = []
        for t in np.atleast_1d(times):
            b = self.plane(float(t))
            full = np.zeros((2 * (m + 1), m + 1))
            full[0, 0] = 1.0
            full[1 : m + 1, 1:] = b[:m]
            full[m + 2 :, 1:] = b[m:]
            out.append(full)
        return out

    def to_csv(self) -> str:
        m = self.m
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["t", "chart"] + [f"A{i + 1}{j + 1}" for i in range(m) for j in range(m)])
        for t, c, A in zip(self.times, self.charts, self.A_values):
            wr.writerow([f"{t:.17g}", c] + [f"{v:.17g}" for v in np.ravel(A)])
        return buf.getvalue()


def propagate_section(
    coeffs: QuadraticCoefficients,
    initial: RiccatiState,
    t_span,
    threshold: float = THRESHOLD,
    rtol: float = RTOL,
    atol: float = ATOL,
    max_switches: int = 1000,
) -> RiccatiTrajectory:
    """Integrate the Riccati equation over ``t_span``, switching charts at ``||A||_F = threshold``."""
    A0 = initial.A
    if np.abs(A0 - A0.T).max() > 1e-10 * max(1.0, np.abs(A0).max()):
        raise ContractViolation("initial A must be symmetric")
    m = initial.m
    if m != coeffs.m:
        raise ContractViolation("initial state and coefficients differ in dimension")
    t0, t1 = float(t_span[0]), float(t_span[1])
    state = RiccatiState(sym(A0), initial.chart, t0)
    if np.linalg.norm(state.A) >= threshold:
        state = chart_switch(state)
    segs, times, As, charts, switches = [], [], [], [], []
    direction = 1.0 if t1 >= t0 else -1.0
    while True:
        chart = state.chart

        def rhs(t, a, chart=chart):
            A = sym(a.reshape(m, m))
            return riccati_rhs(coeffs, RiccatiState(A, chart, t)).ravel()

        def hit(t, a):
            return np.linalg.norm(a) - threshold

        hit.terminal = True
        hit.direction = 1
        sol = solve_ivp(rhs, (state.t, t1), state.A.ravel(), method="DOP853", rtol=rtol, atol=atol,
                        events=hit, dense_output=True)
        if sol.status == -1:
            raise ContractViolation(f"Riccati integration failed: {sol.message}")
        tend = float(sol.t[-1])
        segs.append(_Segment(state.t, tend, chart, sol.sol, m))
        for t, a in zip(sol.t, sol.y.T):
            times.append(float(t))
            As.append(sym(a.reshape(m, m)))
            charts.append(chart)
        if sol.status == 1 and direction * (t1 - tend) > 0:
            if len(switches) >= max_switches:
                raise ContractViolation("too many chart switches")
            new = chart_switch(RiccatiState(sym(sol.y[:, -1].reshape(m, m)), chart, tend))
            if new.chart == chart:
                raise InternalInvariantFailure("chart switch failed to reduce the slope")
            switches.append(tend)
            state = new
            continue
        break
    return RiccatiTrajectory(segs, np.array(times), As, charts, switches)


def transport_plane(coeffs: QuadraticCoefficients, basis: np.ndarray, t0: float, t1: float) -> np.ndarray:
    """Push a ``2m x k`` basis forward by the linearized flow from ``t0`` to ``t1``."""
    if t1 == t0:
        return basis.copy()
    shape = basis.shape

    def rhs(t, z):
        return (coeffs.flow_matrix(t) @ z.reshape(shape)).ravel()

    sol = solve_ivp(rhs, (t0, t1), basis.ravel(), method="DOP853", rtol=RTOL, atol=ATOL)
    q, _ = np.linalg.qr(sol.y[:, -1].reshape(shape))
    return q


def principal_angle(P: np.ndarray, Q: np.ndarray) -> float:
    return float(np.max(subspace_angles(P, Q)))


def grazing_residual(
    coeffs: QuadraticCoefficients,
    trajectory: RiccatiTrajectory,
    times: Optional[Sequence[float]] = None,
    mode: str = "step",
    return_profile: bool = False,
):
    """Largest principal angle between flow-transported planes and the trajectory's planes.

    ``mode="step"`` transports ``L(t_k)`` to ``t_{k+1}`` over each grid step;
    ``mode="cumulative"`` transports ``L(t_0)`` to every grid time.
    """
    lo, hi = trajectory.t_span
    ts = np.linspace(lo, hi, 33) if times is None else np.asarray(times, dtype=float)
    prof = [0.0]
    if mode == "step":
        for a, b in zip(ts[:-1], ts[1:]):
            moved = transport_plane(coeffs, trajectory.plane(a), a, b)
            prof.append(principal_angle(moved, trajectory.plane(b)))
    elif mode == "cumulative":
        base = trajectory.plane(ts[0])
        for a, b in zip(ts[:-1], ts[1:]):
            base = transport_plane(coeffs, base, a, b)
            prof.append(principal_angle(base, trajectory.plane(b)))
    else:
        raise ContractViolation(f"unknown residual mode {mode!r}")
    prof = np.array(prof)
    return (float(prof.max()), ts, prof) if return_profile else float(prof.max())


def coefficients_along_curve(model, curve, time_index: int = 0) -> QuadraticCoefficients:
    """Quadratic coefficients of ``r = tau - p`` read off the Hessian of ``p`` along a curve.

    Base coordinate ``time_index`` plays the role of time (``w[0] = t`` by default);
    values between samples are linearly interpolated.
    """
    n = model.dim
    m = n - 1
    if not 0 <= time_index < n:
        raise ContractViolation("time_index must select a base coordinate")
    ts = curve.samples[:, time_index]
    order = np.argsort(ts)
    ts = ts[order]
    if ts[-1] - ts[0] <= 0:
        raise ContractViolation("the chosen time coordinate is constant along the curve")
    H = np.array([model.hessian(w) for w in curve.samples[order]])
    xs = [i for i in range(n) if i != time_index]
    fs = [n + i for i in xs]
    K = -H[:, xs][:, :, xs]
    B = -H[:, xs][:, :, fs]
    Cm = -H[:, fs][:, :, fs]

    def interp(arr):
        def f(t):
            flat = arr.reshape(arr.shape[0], -1)
            return np.array([np.interp(t, ts, flat[:, k]) for k in range(flat.shape[1])]).reshape(m, m)

        return f

    return QuadraticCoefficients(interp(K), interp(B), interp(Cm), m)
