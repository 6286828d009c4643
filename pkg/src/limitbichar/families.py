"""Built-in symbol families.

All of them are polynomial in the phase variables, so every derivative up to
third order is exact. Variables are ordered ``(base..., fiber...)``.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .errors import ContractViolation
from .polynomial import Polynomial
from .symbol_model import SymbolModel

Q2_CASES = ("neg_eta1_sq", "mu0_y1_eta1", "eta1_eta2_minus_y2_sq")


def _var(i, nvars):
    return Polynomial.variable(i, nvars)


def polynomial_symbol(
    n: int,
    p_table,
    p0_table=None,
    homogeneity_degree: Optional[float] = None,
    name: str = "polynomial",
) -> SymbolModel:
    """Symbol from coefficient tables; rows are ``[exponents..., coefficient]`` over ``2n`` variables."""
    p = Polynomial.from_table(p_table, 2 * n)
    p0 = Polynomial.from_table(p0_table, 2 * n) if p0_table else None
    return SymbolModel.from_polynomials(p, p0, homogeneity_degree=homogeneity_degree, name=name)


def tau_minus_r(
    n: int,
    r: Polynomial,
    p0: Optional[Polynomial] = None,
    scale: float = 1.0,
    name: str = "tau-minus-r",
) -> SymbolModel:
    """``scale * (tau - r)`` with ``r`` independent of tau."""
    nv = 2 * n
    if r.nvars != nv:
        raise ContractViolation("r must be a polynomial in the 2n phase variables")
    if np.any(r.exponents[:, n] != 0):
        raise ContractViolation("r must not depend on tau")
    p = (_var(n, nv) - r) * scale
    return SymbolModel.from_polynomials(p, p0, name=name)


def quadratic_hyperbolic(
    mu: Sequence[float] = (),
    n_free: int = 1,
    q2: str = "neg_eta1_sq",
    mu0: float = 1.0,
    p0: Optional[Polynomial] = None,
) -> SymbolModel:
    """Normal form ``Q1(x, xi) + Q2(y, eta)`` of a hyperbolic quadratic form.

    ``Q1 = sum mu_j (x_j^2 + xi_j^2) + sum_{free} xi_j^2`` with ``mu_j > 0``;
    ``q2`` picks one of ``-eta_1^2``, ``mu0 y_1 eta_1`` or ``2 eta_1 eta_2 - y_2^2``.
    Base coordinates are ``(x_1..x_m, y_1..y_r)``.
    """
    mu = [float(m) for m in mu]
    if any(m <= 0 for m in mu):
        raise ContractViolation("all mu_j must be positive")
    if q2 not in Q2_CASES:
        raise ContractViolation(f"unknown Q2 case {q2!r}; expected one of {Q2_CASES}")
    if q2 == "mu0_y1_eta1" and mu0 == 0:
        raise ContractViolation("mu0 must be nonzero")
    m = len(mu) + int(n_free)
    r = 2 if q2 == "eta1_eta2_minus_y2_sq" else 1
    n = m + r
    if n < 2:
        raise ContractViolation("quadratic normal form needs n >= 2")
    nv = 2 * n
    x = lambda j: _var(j, nv)
    xi = lambda j: _var(n + j, nv)
    y = lambda j: _var(m + j, nv)
    eta = lambda j: _var(n + m + j, nv)
    q = Polynomial.zero(nv)
    for j, mj in enumerate(mu):
        q = q + (x(j) ** 2 + xi(j) ** 2) * mj
    for j in range(len(mu), m):
        q = q + xi(j) ** 2
    if q2 == "neg_eta1_sq":
        q = q - eta(0) ** 2
    elif q2 == "mu0_y1_eta1":
        q = q + y(0) * eta(0) * mu0
    else:
        q = q + eta(0) * eta(1) * 2.0 - y(1) ** 2
    return SymbolModel.from_polynomials(q, p0, name=f"quadratic[{q2}]")


def product_of_principal_type(factors: Sequence[Sequence[float]], p0: Optional[Polynomial] = None) -> SymbolModel:
    """Product of linear forms ``<c_k, w>`` in the phase variables.

    Linear forms in the fiber variables only are homogeneous of degree one, so
    the product is homogeneous of degree ``len(factors)`` in that case.
    """
    factors = [np.asarray(c, dtype=float) for c in factors]
    nv = factors[0].size
    if nv % 2 or any(c.size != nv for c in factors):
        raise ContractViolation("factors must be coefficient vectors over the 2n phase variables")
    p = Polynomial.constant(1.0, nv)
    for c in factors:
        lin = Polynomial.zero(nv)
        for i, ci in enumerate(c):
            if ci != 0:
                lin = lin + _var(i, nv) * ci
        p = p * lin
    n = nv // 2
    fiber_only = all(np.all(c[:n] == 0) for c in factors)
    return SymbolModel.from_polynomials(
        p, p0, homogeneity_degree=float(len(factors)) if fiber_only else None, name="product"
    )


def root_symbol(k: int, a: Polynomial, w1_index: int, p0: Optional[Polynomial] = None) -> SymbolModel:
    """``w_1^k - a(w')`` where ``w_1`` is phase variable ``w1_index`` and ``a`` does not involve it."""
    if k < 2:
        raise ContractViolation("root symbols need k >= 2")
    if np.any(a.exponents[:, w1_index] != 0):
        raise ContractViolation("a(w') must not depend on w_1")
    p = _var(w1_index, a.nvars) ** k - a
    return SymbolModel.from_polynomials(p, p0, name=f"root[k={k}]")
