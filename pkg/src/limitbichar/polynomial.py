"""Sparse multivariate polynomials with exact derivatives.

Symbols given as coefficient tables are stored as a list of exponent tuples
and coefficients. Derivatives are formed term-wise once and cached, so that
evaluating a gradient or a Hessian is a couple of vectorized products.
"""

from __future__ import annotations

from functools import cached_property
from typing import Iterable, Mapping, Sequence

import numpy as np


class Polynomial:
    """Polynomial in ``nvars`` variables, real or complex coefficients."""

    def __init__(self, exponents, coefficients, nvars: int | None = None):
        exps = np.asarray(exponents, dtype=np.int64)
        coefs = np.asarray(coefficients)
        if exps.ndim == 1:
            exps = exps.reshape(-1, nvars if nvars else exps.size)
        if nvars is None:
            nvars = exps.shape[1]
        if exps.size == 0:
            exps = np.zeros((0, nvars), dtype=np.int64)
            coefs = np.zeros(0)
        if exps.shape[1] != nvars:
            raise ValueError(f"exponent rows have length {exps.shape[1]}, expected {nvars}")
        if np.any(exps < 0):
            raise ValueError("negative exponents are not polynomial")
        # merge duplicate monomials
        if len(exps):
            uniq, inv = np.unique(exps, axis=0, return_inverse=True)
            merged = np.zeros(len(uniq), dtype=np.result_type(coefs, float))
            np.add.at(merged, inv.ravel(), coefs)
            keep = merged != 0
            exps, coefs = uniq[keep], merged[keep]
        self.nvars = nvars
        self.exponents = exps
        self.coefficients = coefs

    @classmethod
    def from_terms(cls, terms: Mapping[Sequence[int], complex] | Iterable, nvars: int):
        if isinstance(terms, Mapping):
            items = list(terms.items())
        else:
            items = [(tuple(t[:-1]), t[-1]) for t in terms]
        if not items:
            return cls.zero(nvars)
        exps = [list(e) for e, _ in items]
        coefs = [c for _, c in items]
        return cls(exps, coefs, nvars)

    @classmethod
    def zero(cls, nvars: int):
        return cls(np.zeros((0, nvars), dtype=np.int64), [], nvars)

    @classmethod
    def constant(cls, c, nvars: int):
        return cls([[0] * nvars], [c], nvars)

    @classmethod
    def variable(cls, i: int, nvars: int):
        e = [0] * nvars
        e[i] = 1
        return cls([e], [1.0], nvars)

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.coefficients) or bool(
            np.all(np.imag(self.coefficients) == 0)
        )

    @property
    def degree(self) -> int:
        return int(self.exponents.sum(axis=1).max()) if len(self.exponents) else 0

    def __call__(self, w):
        w = np.asarray(w, dtype=float)
        if not len(self.coefficients):
            return 0.0 * w[..., 0]
        mono = np.prod(w[..., None, :] ** self.exponents, axis=-1)
        out = mono @ self.coefficients
        return out

    def __add__(self, other):
        if not isinstance(other, Polynomial):
            other = Polynomial.constant(other, self.nvars)
        return Polynomial(
            np.vstack([self.exponents, other.exponents]),
            np.concatenate([self.coefficients, other.coefficients]),
            self.nvars,
        )

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.exponents, -self.coefficients, self.nvars)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Polynomial) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Polynomial):
            return Polynomial(self.exponents, self.coefficients * other, self.nvars)
        if not len(self.coefficients) or not len(other.coefficients):
            return Polynomial.zero(self.nvars)
        exps = (self.exponents[:, None, :] + other.exponents[None, :, :]).reshape(-1, self.nvars)
        coefs = np.outer(self.coefficients, other.coefficients).ravel()
        return Polynomial(exps, coefs, self.nvars)

    __rmul__ = __mul__

    def __pow__(self, k: int):
        out = Polynomial.constant(1.0, self.nvars)
        for _ in range(int(k)):
            out = out * self
        return out

    def diff(self, i: int) -> "Polynomial":
        e = self.exponents[:, i]
        keep = e > 0
        exps = self.exponents[keep].copy()
        coefs = self.coefficients[keep] * e[keep]
        exps[:, i] -= 1
        return Polynomial(exps, coefs, self.nvars)

    @cached_property
    def _grad_polys(self):
        return [self.diff(i) for i in range(self.nvars)]

    @cached_property
    def _hess_polys(self):
        return [[g.diff(j) for j in range(self.nvars)] for g in self._grad_polys]

    @cached_property
    def _third_polys(self):
        return [[[h.diff(k) for k in range(self.nvars)] for h in row] for row in self._hess_polys]

    def gradient(self, w):
        return np.array([g(w) for g in self._grad_polys])

    def hessian(self, w):
        return np.array([[h(w) for h in row] for row in self._hess_polys])

    def third(self, w):
        return np.array([[[c(w) for c in r2] for r2 in r1] for r1 in self._third_polys])

    def to_table(self) -> list:
        """Rows ``[e_1, ..., e_nvars, coefficient]``; complex coefficients as ``[re, im]``."""
        rows = []
        for e, c in zip(self.exponents.tolist(), self.coefficients.tolist()):
            c = complex(c)
            rows.append(e + ([c.real] if c.imag == 0 else [[c.real, c.imag]]))
        return rows

    @classmethod
    def from_table(cls, rows, nvars: int):
        terms = {}
        for row in rows:
            if len(row) != nvars + 1:
                raise ValueError(f"polynomial row {row!r} needs {nvars} exponents and a coefficient")
            c = row[-1]
            if isinstance(c, (list, tuple)):
                c = complex(c[0], c[1])
            key = tuple(int(v) for v in row[:-1])
            terms[key] = terms.get(key, 0) + c
        return cls.from_terms(terms, nvars)

    def __repr__(self):
        return f"Polynomial(nvars={self.nvars}, terms={len(self.coefficients)})"
