"""Prepared model data: the root ``r`` of ``p`` in ``tau``, the coefficient ``q0`` and the scaling exponents.

The prepared symbol is ``tau - r(t, x, xi) + q0(t)`` near the ray ``{(t, 0; 0, lambda xi0)}``,
described through the scaled symbol ``s(t, x, xi) = r(t, x, lambda xi) / lambda``::

    s(t, x, xi0 + eta) = 1/2 x.K x + x.B eta + 1/2 lambda^eps eta.Ct eta + lambda^(2 eps) sum_i c_i x_i^3 / 6

All coefficients are polynomials in ``t``. ``K = d_x^2 s``, ``B = d_x d_xi s`` and
``Ct = lambda^-eps d_xi^2 s`` at ``(t, 0, xi0)``. With this scaling the
characteristics are exactly invariant under ``x = lambda^(-3 eps) y``,
``eta = lambda^(-4 eps) zeta``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence, Tuple

import numpy as np
from numpy.polynomial import chebyshev as C

from .errors import ContractViolation, PreparationFailure
from .symbol_model import SymbolModel, eval_principal, eval_subprincipal, homogeneous_gradient_norm

EPS, DELTA, RHO, KAPPA_EXP = 0.1, 0.4, 0.1, 0.1


def _poly_t(coefs, shape) -> np.ndarray:
    """Coefficient array of a polynomial in t with values of ``shape`` (lowest degree first)."""
    a = np.asarray(coefs, dtype=float)
    if int(np.prod(shape)) == 1 and a.ndim <= 1:
        # d = 1: a scalar or a plain list of t-coefficients
        a = a.reshape((-1,) + shape)
    if a.shape == shape:
        a = a[None]
    if a.ndim == len(shape):
        a = a.reshape((-1,) + shape)
    if a.shape[1:] != shape:
        raise ContractViolation(f"coefficient of shape {a.shape[1:]} where {shape} was expected")
    return a


def _eval_t(a: np.ndarray, t):
    t = np.asarray(t, dtype=float)
    out = np.zeros(t.shape + a.shape[1:])
    for k in range(a.shape[0] - 1, -1, -1):
        out = out * t[(...,) + (None,) * (a.ndim - 1)] + a[k]
    return out


def _deriv_t(a: np.ndarray) -> np.ndarray:
    if a.shape[0] == 1:
        return np.zeros_like(a)
    k = np.arange(1, a.shape[0]).reshape((-1,) + (1,) * (a.ndim - 1))
    return a[1:] * k


@dataclass
class PreparedModel:
    d: int = 1
    K: np.ndarray = None
    B: np.ndarray = None
    Ct: np.ndarray = None
    cubic: np.ndarray = None
    q0_coefs: Sequence[complex] = (0j,)
    q0_log_power: Optional[float] = None
    xi0: np.ndarray = None
    epsilon: float = EPS
    delta: float = DELTA
    rho: float = RHO
    kappa_exp: float = KAPPA_EXP
    lam: float = 1.0
    interval: Tuple[float, float] = (-1.0, 1.0)
    expansion_mode: bool = True
    waive_exponents: bool = False
    name: str = "prepared"

    def __post_init__(self):
        d = int(self.d)
        if d < 1:
            raise ContractViolation("need at least one transversal variable")
        self.K = _poly_t(np.zeros((d, d)) if self.K is None else self.K, (d, d))
        self.B = _poly_t(np.zeros((d, d)) if self.B is None else self.B, (d, d))
        self.Ct = _poly_t(np.zeros((d, d)) if self.Ct is None else self.Ct, (d, d))
        self.cubic = _poly_t(np.zeros(d) if self.cubic is None else self.cubic, (d,))
        for name in ("K", "Ct"):
            a = getattr(self, name)
            if np.abs(a - np.swapaxes(a, 1, 2)).max() > 0:
                raise ContractViolation(f"{name} must be symmetric")
        xi0 = np.zeros(d) if self.xi0 is None else np.atleast_1d(np.asarray(self.xi0, dtype=float))
        if self.xi0 is None:
            xi0[0] = 1.0
        if xi0.shape != (d,) or abs(np.linalg.norm(xi0) - 1) > 1e-12:
            raise ContractViolation("xi0 must be a unit vector in R^d")
        self.xi0 = xi0
        self.q0_coefs = tuple(complex(c) for c in np.atleast_1d(self.q0_coefs))
        a, b = self.interval
        if not a < b:
            raise ContractViolation("interval must have positive length")
        self.interval = (float(a), float(b))
        if not self.lam >= 1:
            raise ContractViolation("lambda must be >= 1")
        check_exponents(self.epsilon, self.delta, self.expansion_mode, self.waive_exponents)

    # -- coefficient evaluation ----------------------------------------------------
    def K_at(self, t):
        return _eval_t(self.K, t)

    def B_at(self, t):
        return _eval_t(self.B, t)

    def Ct_at(self, t):
        return _eval_t(self.Ct, t)

    def cubic_at(self, t):
        return _eval_t(self.cubic, t)

    @property
    def n(self) -> int:
        return self.d + 1

    def with_lambda(self, lam: float) -> "PreparedModel":
        return replace(self, lam=float(lam))

    # -- symbols -------------------------------------------------------------------
    def s(self, t, x, eta):
        """``s(t, x, xi0 + eta)``; ``x`` and ``eta`` have trailing dimension ``d``."""
        x = np.asarray(x, dtype=float)
        eta = np.asarray(eta, dtype=float)
        le = self.lam**self.epsilon
        K, B, Ct, c3 = self.K_at(t), self.B_at(t), self.Ct_at(t), self.cubic_at(t)
        val = 0.5 * np.einsum("...i,...ij,...j->...", x, K, x)
        val = val + np.einsum("...i,...ij,...j->...", x, B, eta)
        val = val + 0.5 * le * np.einsum("...i,...ij,...j->...", eta, Ct, eta)
        return val + le**2 * np.sum(c3 * x**3, axis=-1) / 6.0

    def ds_dx(self, t, x, eta):
        x, eta = np.asarray(x, float), np.asarray(eta, float)
        le = self.lam**self.epsilon
        K, B, c3 = self.K_at(t), self.B_at(t), self.cubic_at(t)
        return np.einsum("...ij,...j->...i", K, x) + np.einsum("...ij,...j->...i", B, eta) + le**2 * c3 * x**2 / 2

    def ds_deta(self, t, x, eta):
        x, eta = np.asarray(x, float), np.asarray(eta, float)
        le = self.lam**self.epsilon
        return np.einsum("...ji,...j->...i", self.B_at(t), x) + le * np.einsum("...ij,...j->...i", self.Ct_at(t), eta)

    def d2s_deta2(self, t):
        return self.lam**self.epsilon * self.Ct_at(t)

    def r(self, t, x, xi):
        """``r(t, x, xi) = lambda s(t, x, xi / lambda)``."""
        xi = np.asarray(xi, dtype=float)
        return self.lam * self.s(t, x, xi / self.lam - self.xi0)

    def r_coefficients(self, t, x):
        """``r`` as a polynomial in ``zeta = xi - lambda xi0`` for ``d = 1``: ``(a0, a1, a2)`` at points ``x``."""
        if self.d != 1:
            raise ContractViolation("polynomial r coefficients are only provided for d = 1")
        x = np.asarray(x, dtype=float)
        le = self.lam**self.epsilon
        K, B, Ct, c3 = (float(np.squeeze(v)) for v in (self.K_at(t), self.B_at(t), self.Ct_at(t), self.cubic_at(t)))
        a0 = self.lam * (0.5 * K * x**2 + le**2 * c3 * x**3 / 6)
        a1 = B * x
        a2 = np.full_like(x, 0.5 * le * Ct / self.lam)
        return a0, a1, a2

    # -- subprincipal part ---------------------------------------------------------
    def q0_scale(self) -> float:
        if self.q0_log_power is None:
            return 1.0
        return float(np.log(self.lam) ** self.q0_log_power)

    def q0(self, t):
        t = np.asarray(t, dtype=float)
        c = np.array(self.q0_coefs, dtype=complex)
        return self.q0_scale() * np.polynomial.polynomial.polyval(t, c)

    def B_exact(self, t):
        """Exact antiderivative of ``q0`` with ``B(0) = 0``."""
        c = np.array(self.q0_coefs, dtype=complex)
        ci = np.polynomial.polynomial.polyint(c)
        return self.q0_scale() * np.polynomial.polynomial.polyval(np.asarray(t, dtype=float), ci)

    def coefficients(self, units: str = "s"):
        """Quadratic coefficients for the Riccati equation.

        ``units="s"`` gives ``(d_x^2 s, d_x d_xi s, d_xi^2 s)``; ``"r"`` gives the
        same derivatives of ``r`` at ``(t, 0, lambda xi0)``.
        """
        from .grazing_lagrangean import QuadraticCoefficients

        le = self.lam**self.epsilon
        if units == "s":
            return QuadraticCoefficients(self.K_at, self.B_at, lambda t: le * self.Ct_at(t), self.d)
        if units == "r":
            lam = self.lam
            return QuadraticCoefficients(
                lambda t: lam * self.K_at(t), self.B_at, lambda t: le / lam * self.Ct_at(t), self.d
            )
        raise ContractViolation(f"unknown units {units!r}")

    # -- serialization -------------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "d": self.d,
            "K": self.K.tolist(),
            "B": self.B.tolist(),
            "Ct": self.Ct.tolist(),
            "cubic": self.cubic.tolist(),
            "q0_coefs": [[c.real, c.imag] for c in self.q0_coefs],
            "q0_log_power": self.q0_log_power,
            "xi0": self.xi0.tolist(),
            "epsilon": self.epsilon,
            "delta": self.delta,
            "rho": self.rho,
            "kappa_exp": self.kappa_exp,
            "lambda": self.lam,
            "interval": list(self.interval),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "PreparedModel":
        kw = dict(d)
        if "lambda" in kw:
            kw["lam"] = kw.pop("lambda")
        if "q0_coefs" in kw:
            kw["q0_coefs"] = [complex(*c) if isinstance(c, (list, tuple)) else complex(c) for c in kw["q0_coefs"]]
        if "interval" in kw:
            kw["interval"] = tuple(kw["interval"])
        return cls(**kw)


def check_exponents(epsilon: float, delta: float, expansion_mode: bool = True, waive: bool = False):
    if not epsilon > 0:
        raise ContractViolation("epsilon must be positive")
    if waive:
        return
    if abs(delta - (1 + 2 * epsilon) / 3) > 1e-12:
        raise ContractViolation(f"delta = {delta} must equal (1 + 2 eps)/3 = {(1 + 2 * epsilon) / 3}")
    if expansion_mode and not epsilon < 1 / 7:
        raise ContractViolation("expansion mode needs eps < 1/7")


def straighten(prepared: PreparedModel, trajectory, degree: int = 16) -> PreparedModel:
    """Pull the model back by ``xi -> xi + A(t) x`` with ``A`` a Riccati solution in ``s`` units.

    The quadratic phase change adds ``-1/2 x.A' x`` to ``s``; when ``A`` solves
    the Riccati equation the new ``d_x^2 s`` vanishes identically. The result
    stores the new coefficients sampled as Chebyshev-fitted polynomials on the
    trajectory's span.
    """
    if any(c != 0 for c in trajectory.charts):
        raise ContractViolation("straightening needs a trajectory in the identity chart")
    lo, hi = sorted(trajectory.t_span)
    d = prepared.d
    le = prepared.lam**prepared.epsilon
    ts = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos(np.pi * (np.arange(33) + 0.5) / 33)
    A = np.array([trajectory.state(t).A for t in ts])
    Bs = np.array([prepared.B_at(t) for t in ts])
    Cs = np.array([le * prepared.Ct_at(t) for t in ts])
    Ks = np.array([prepared.K_at(t) for t in ts])
    h = 1e-4 * (hi - lo)
    Aprime = np.array(
        [
            (
                -trajectory.state(min(t + 2 * h, hi)).A + 8 * trajectory.state(min(t + h, hi)).A
                - 8 * trajectory.state(max(t - h, lo)).A + trajectory.state(max(t - 2 * h, lo)).A
            )
            / (12 * h)
            for t in ts
        ]
    )
    Knew = Ks + Bs @ A + A @ np.swapaxes(Bs, 1, 2) + A @ Cs @ A - Aprime
    Bnew = Bs + A @ Cs

    def fit(vals):
        flat = vals.reshape(len(ts), -1)
        return np.polynomial.polynomial.polyfit(ts, flat, degree).reshape((-1,) + vals.shape[1:])

    return replace(prepared, K=fit(Knew), B=fit(Bnew), name=prepared.name + "+straightened")


# -- root of p in tau ----------------------------------------------------------------
def tau_root_solve(model: SymbolModel, t, x, xi, seed: float, tol: float = 1e-12, max_iter: int = 50) -> float:
    """Newton iteration for ``p(t, x, tau, xi) = 0`` in ``tau`` from ``seed``."""
    n = model.dim
    x = np.atleast_1d(np.asarray(x, dtype=float))
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    if x.size != n - 1 or xi.size != n - 1:
        raise ContractViolation("x and xi must have n - 1 components")
    w = np.concatenate([[t], x, [seed], xi]).astype(float)
    for _ in range(max_iter):
        pv = eval_principal(model, w)
        dp = model.gradient(w)[n]
        if abs(dp) < 1e-8:
            raise PreparationFailure(f"|d_tau p| = {abs(dp):.2e} at tau = {w[n]:.6g}: branch degenerates")
        step = pv / dp
        w[n] -= step
        if abs(eval_principal(model, w)) <= tol * max(1.0, abs(dp)) and abs(step) <= 1e-10 * max(1.0, abs(w[n])):
            return float(w[n])
    if abs(eval_principal(model, w)) <= tol:
        return float(w[n])
    raise PreparationFailure(f"Newton did not converge in {max_iter} iterations")


def tau_root_path(model: SymbolModel, points, seed: float) -> np.ndarray:
    """Roots along a path of ``(t, x, xi)`` points, each seeded by the previous root."""
    out = []
    cur = seed
    for t, x, xi in points:
        cur = tau_root_solve(model, t, x, xi, cur)
        out.append(cur)
    return np.array(out)


def root_evaluator(model: SymbolModel, seed: float = 0.0) -> Callable:
    """``r(t, x, xi)`` as the root in ``tau``, continued from the last evaluated point."""
    state = {"seed": seed}

    def r(t, x, xi):
        v = tau_root_solve(model, t, x, xi, state["seed"])
        state["seed"] = v
        return v

    return r


# -- q0 -------------------------------------------------------------------------------
def q0_normalform(model: SymbolModel, curve=None, ts=None, points=None, max_degree: int = 30) -> np.ndarray:
    """``D_t |grad_h p| / (2 |grad_h p|) + p0 / |grad_h p|`` sampled on the curve.

    Points are the curve samples (with ``t = w[0]``) or explicit ``ts``/``points``.
    ``D_t log |grad_h p|`` comes from a least-squares Chebyshev fit in ``t``.
    """
    if curve is not None:
        points = curve.samples
        ts = curve.samples[:, 0]
    pts = np.asarray(points, dtype=float)
    ts = np.asarray(ts, dtype=float)
    if ts.size < 3:
        raise ContractViolation("need at least three samples in t")
    g = np.array([homogeneous_gradient_norm(model, w) for w in pts])
    if np.any(g < model.degeneracy_threshold):
        from .errors import DegenerateHamiltonField

        raise DegenerateHamiltonField("homogeneous gradient vanishes on the curve", norm=float(g.min()))
    lo, hi = ts.min(), ts.max()
    u = (2 * ts - lo - hi) / (hi - lo)
    deg = min(max_degree, ts.size - 1)
    coef = C.chebfit(u, np.log(g), deg)
    dlog = C.chebval(u, C.chebder(coef)) * 2 / (hi - lo)
    p0 = np.array([eval_subprincipal(model, w) for w in pts])
    return dlog / (2j) + p0 / g


def lambda_from_kappa(kappa: float, epsilon: float) -> float:
    if not (0 < kappa < 1) or not epsilon > 0:
        raise ContractViolation("need 0 < kappa < 1 and epsilon > 0")
    return float(kappa ** (-1.0 / epsilon))


def kappa_from_lambda(lam: float, epsilon: float) -> float:
    if not lam > 1 or not epsilon > 0:
        raise ContractViolation("need lambda > 1 and epsilon > 0")
    return float(lam ** (-epsilon))
