"""Symbols on phase space and the geometric quantities derived from them.

Phase points are stored as flat arrays ``w = (t, x_1..x_{n-1}, tau, xi_1..xi_{n-1})``:
the first ``n`` entries are base coordinates, the last ``n`` are fiber
coordinates. With this ordering the Hamilton field of ``p`` is
``(d_fiber p, -d_base p)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.optimize import minimize_scalar

from .errors import ContractViolation, DegenerateHamiltonField
from .polynomial import Polynomial

DEFAULT_DEGENERACY = 1e-12


@dataclass(frozen=True)
class PhasePoint:
    """A point (t, x; tau, xi) of T*R^n."""

    t: float
    x: np.ndarray
    tau: float
    xi: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        xi = np.atleast_1d(np.asarray(self.xi, dtype=float))
        if x.shape != xi.shape:
            raise ContractViolation(f"x has {x.size} components but xi has {xi.size}")
        if x.size < 1:
            raise ContractViolation("phase space needs n >= 2")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "xi", xi)

    @property
    def dim(self) -> int:
        return self.x.size + 1

    def as_array(self) -> np.ndarray:
        return np.concatenate([[self.t], self.x, [self.tau], self.xi])

    @classmethod
    def from_array(cls, w) -> "PhasePoint":
        w = np.asarray(w, dtype=float)
        if w.ndim != 1 or w.size % 2 or w.size < 4:
            raise ContractViolation(f"phase vector of length {w.size} is not (t,x;tau,xi)")
        n = w.size // 2
        return cls(w[0], w[1:n], w[n], w[n + 1 :])

    @property
    def base(self) -> np.ndarray:
        return np.concatenate([[self.t], self.x])

    @property
    def fiber(self) -> np.ndarray:
        return np.concatenate([[self.tau], self.xi])


def _as_vector(w, dim: Optional[int] = None) -> np.ndarray:
    arr = w.as_array() if isinstance(w, PhasePoint) else np.asarray(w, dtype=float)
    if dim is not None and arr.shape != (2 * dim,):
        raise ContractViolation(f"phase point of length {arr.size} does not match dimension n={dim}")
    return arr


def fd_step(w: np.ndarray) -> float:
    return np.finfo(float).eps ** (1 / 3) * max(1.0, float(np.linalg.norm(w)))


def fd_gradient(f: Callable, w: np.ndarray) -> np.ndarray:
    h = fd_step(w)
    g = np.empty(w.size, dtype=np.result_type(f(w), float))
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        g[i] = (f(w + e) - f(w - e)) / (2 * h)
    return g


def fd_jacobian(f: Callable, w: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of a vector-valued ``f``; columns are partial derivatives."""
    h = fd_step(w)
    cols = []
    for i in range(w.size):
        e = np.zeros_like(w)
        e[i] = h
        cols.append((np.asarray(f(w + e)) - np.asarray(f(w - e))) / (2 * h))
    return np.stack(cols, axis=-1)


@dataclass(frozen=True)
class SymbolModel:
    """Evaluator bundle for a principal symbol ``p`` and subprincipal symbol ``p0``.

    ``grad``, ``hess`` and ``third`` are optional analytic derivatives; missing
    ones fall back to central finite differences of the next lower order.
    ``homogeneity_degree`` is ``None`` for local (non-conic) models, in which
    case flows are not projected onto the cosphere.
    """

    dim: int
    p: Callable[[np.ndarray], float]
    p0: Callable[[np.ndarray], complex] = field(default=lambda w: 0j)
    grad: Optional[Callable] = None
    hess: Optional[Callable] = None
    third: Optional[Callable] = None
    homogeneity_degree: Optional[float] = None
    name: str = "symbol"
    degeneracy_threshold: float = DEFAULT_DEGENERACY
    fiber_norm_mode: str = "full"
    polynomial: Optional[Polynomial] = None
    sub_polynomial: Optional[Polynomial] = None

    def __post_init__(self):
        if self.dim < 2:
            raise ContractViolation("phase space needs n >= 2")
        if self.fiber_norm_mode not in ("full", "xi"):
            raise ContractViolation(f"unknown fiber norm mode {self.fiber_norm_mode!r}")

    @classmethod
    def from_polynomials(cls, p: Polynomial, p0: Optional[Polynomial] = None, **kw):
        if p.nvars % 2:
            raise ContractViolation("polynomial symbols need an even number of variables")
        if not p.is_real:
            raise ContractViolation("the principal symbol must be real")
        preal = Polynomial(p.exponents, np.real(p.coefficients), p.nvars)
        sub = p0 if p0 is not None else Polynomial.zero(p.nvars)
        return cls(
            dim=p.nvars // 2,
            p=lambda w: float(preal(w)),
            p0=lambda w: complex(sub(w)),
            grad=preal.gradient,
            hess=preal.hessian,
            third=preal.third,
            polynomial=preal,
            sub_polynomial=sub,
            **kw,
        )

    def with_options(self, **kw) -> "SymbolModel":
        from dataclasses import replace

        return replace(self, **kw)

    def scaled(self, c: float) -> "SymbolModel":
        """The model for ``(c p, c p0)``."""
        from dataclasses import replace

        g, h, th = self.grad, self.hess, self.third
        return replace(
            self,
            p=lambda w: c * self.p(w),
            p0=lambda w: c * self.p0(w),
            grad=(lambda w: c * g(w)) if g else None,
            hess=(lambda w: c * h(w)) if h else None,
            third=(lambda w: c * th(w)) if th else None,
            polynomial=None,
            sub_polynomial=None,
        )

    def gradient(self, w) -> np.ndarray:
        w = _as_vector(w, self.dim)
        if self.grad is not None:
            return np.asarray(self.grad(w), dtype=float)
        return fd_gradient(self.p, w)

    def hessian(self, w) -> np.ndarray:
        w = _as_vector(w, self.dim)
        if self.hess is not None:
            return np.asarray(self.hess(w), dtype=float)
        return fd_jacobian(self.gradient, w)

    def third_derivatives(self, w) -> np.ndarray:
        w = _as_vector(w, self.dim)
        if self.third is not None:
            return np.asarray(self.third(w), dtype=float)
        return fd_jacobian(self.hessian, w)


def eval_principal(model: SymbolModel, w) -> float:
    w = _as_vector(w, model.dim)
    val = model.p(w)
    if np.iscomplexobj(val) and np.imag(val) != 0:
        raise ContractViolation("principal symbol returned a non-real value")
    return float(np.real(val))


def eval_subprincipal(model: SymbolModel, w) -> complex:
    return complex(model.p0(_as_vector(w, model.dim)))


def hamilton_field(model: SymbolModel, w) -> np.ndarray:
    """``H_p`` as the (t, x, tau, xi)-components ``(dp/dtau, dp/dxi, -dp/dt, -dp/dx)``."""
    g = model.gradient(w)
    n = model.dim
    return np.concatenate([g[n:], -g[:n]])


def normalized_hamilton_field(model: SymbolModel, w, threshold: Optional[float] = None) -> np.ndarray:
    h = hamilton_field(model, w)
    norm = float(np.linalg.norm(h))
    thr = model.degeneracy_threshold if threshold is None else threshold
    if norm < thr:
        raise DegenerateHamiltonField(
            f"|H_p| = {norm:.3e} below threshold {thr:.1e}", point=_as_vector(w), norm=norm
        )
    return h / norm


def fiber_norm(w, dim: int, mode: str = "full") -> float:
    w = _as_vector(w, dim)
    fib = w[dim:] if mode == "full" else w[dim + 1 :]
    return float(np.linalg.norm(fib))


def homogeneous_gradient_norm(model: SymbolModel, w) -> float:
    """``sqrt(|d_base p|^2/|fiber|^2 + |d_fiber p|^2)``.

    ``model.fiber_norm_mode`` selects whether ``|fiber|`` is ``|(tau, xi)|``
    (default) or ``|xi|`` alone.
    """
    w = _as_vector(w, model.dim)
    n = model.dim
    rho = fiber_norm(w, n, model.fiber_norm_mode)
    if rho == 0:
        raise ContractViolation("homogeneous gradient undefined at zero fiber")
    g = model.gradient(w)
    return float(np.sqrt(np.sum(g[:n] ** 2) / rho**2 + np.sum(g[n:] ** 2)))


def _japanese(v) -> float:
    return float(np.sqrt(1.0 + np.dot(v, v)))


def homogeneous_distance(w, ray) -> float:
    """Distance from ``w`` to the ray ``{(b; r*theta): r > 0}`` in the homogeneous metric.

    The metric ``dt^2 + |dx|^2 + (dtau^2 + |dxi|^2)/<(tau,xi)>^2`` is frozen at
    the ray point, and the ray parameter is found by bounded Brent minimization.
    """
    w = _as_vector(w)
    base_pt, direction = ray
    base_pt = np.asarray(base_pt, dtype=float)
    theta = np.asarray(direction, dtype=float)
    tn = np.linalg.norm(theta)
    if tn == 0:
        raise ContractViolation("ray direction must be nonzero")
    theta = theta / tn
    n = base_pt.size
    db2 = float(np.sum((w[:n] - base_pt) ** 2))
    fib = w[n:]

    def f(r):
        d = fib - r * theta
        return db2 + float(np.dot(d, d)) / _japanese(r * theta) ** 2

    r_proj = max(float(np.dot(fib, theta)), 0.0)
    hi = max(2.0 * r_proj, 1.0) + 1.0
    res = minimize_scalar(f, bounds=(0.0, hi), method="bounded", options={"xatol": 1e-12 * hi})
    best = min(float(res.fun), f(r_proj), f(0.0))
    if np.all(fib == r_proj * theta) and db2 == 0.0:
        return 0.0
    return float(np.sqrt(max(best, 0.0)))
