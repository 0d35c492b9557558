"""Sparse multivariate polynomials with exact derivative bookkeeping."""

from __future__ import annotations

from math import comb
from numbers import Real

import numpy as np

from . import _kernels


class Polynomial:
    """A real polynomial in ``dim`` variables stored as a sum of monomials.

    Parameters
    ----------
    dim : int
        Number of variables.
    terms : mapping of exponent tuple -> coefficient
        Duplicate exponents are merged and zero coefficients dropped.
    """

    __slots__ = ("dim", "coef", "exps")

    def __init__(self, dim: int, terms=None):
        self.dim = int(dim)
        merged: dict[tuple[int, ...], float] = {}
        for e, c in (terms or {}).items():
            e = tuple(int(v) for v in e)
            if len(e) != self.dim:
                raise ValueError(f"exponent {e} has wrong length for dim={self.dim}")
            if any(v < 0 for v in e):
                raise ValueError(f"negative exponent in {e}")
            merged[e] = merged.get(e, 0.0) + float(c)
        items = sorted((e, c) for e, c in merged.items() if c != 0.0)
        self.coef = np.array([c for _, c in items], dtype=np.float64)
        self.exps = np.array([e for e, _ in items], dtype=np.int64).reshape(len(items), self.dim)
        self.coef.setflags(write=False)
        self.exps.setflags(write=False)

    # -- constructors ------------------------------------------------------
    @classmethod
    def constant(cls, dim, value):
        return cls(dim, {(0,) * dim: value})

    @classmethod
    def variable(cls, dim, index, power=1):
        e = [0] * dim
        e[index] = power
        return cls(dim, {tuple(e): 1.0})

    @classmethod
    def from_monomials(cls, dim, monomials):
        """Build from ``[[coef, [e_1, ..., e_dim]], ...]`` (the JSON layout)."""
        terms: dict[tuple[int, ...], float] = {}
        for coef, exps in monomials:
            key = tuple(exps)
            terms[key] = terms.get(key, 0.0) + float(coef)
        return cls(dim, terms)

    def to_monomials(self):
        return [[float(c), [int(v) for v in e]] for c, e in zip(self.coef, self.exps)]

    @property
    def terms(self):
        return {tuple(int(v) for v in e): float(c) for c, e in zip(self.coef, self.exps)}

    def __len__(self):
        return self.coef.shape[0]

    def __repr__(self):
        return f"Polynomial(dim={self.dim}, n_terms={len(self)})"

    def __eq__(self, other):
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.dim == other.dim and self.terms == other.terms

    # -- algebra -----------------------------------------------------------
    def _coerce(self, other):
        if isinstance(other, Polynomial):
            if other.dim != self.dim:
                raise ValueError("dimension mismatch")
            return other
        if isinstance(other, Real):
            return Polynomial.constant(self.dim, float(other))
        return NotImplemented

    def __add__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms = self.terms
        for e, c in other.terms.items():
            terms[e] = terms.get(e, 0.0) + c
        return Polynomial(self.dim, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.dim, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        other = self._coerce(other)
        if other is NotImplemented:
            return other
        terms: dict[tuple[int, ...], float] = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                e = tuple(a + b for a, b in zip(e1, e2))
                terms[e] = terms.get(e, 0.0) + c1 * c2
        return Polynomial(self.dim, terms)

    __rmul__ = __mul__

    def __pow__(self, power: int):
        if power < 0:
            raise ValueError("negative power")
        out = Polynomial.constant(self.dim, 1.0)
        for _ in range(power):
            out = out * self
        return out

    def derivative(self, index: int) -> "Polynomial":
        terms = {}
        for c, e in zip(self.coef, self.exps):
            k = int(e[index])
            if k == 0:
                continue
            e2 = list(int(v) for v in e)
            e2[index] = k - 1
            terms[tuple(e2)] = terms.get(tuple(e2), 0.0) + c * k
        return Polynomial(self.dim, terms)

    def substitute_linear(self, index, poly):
        """Replace variable ``index`` by ``poly`` (used for action expansions)."""
        out = Polynomial(self.dim)
        for c, e in zip(self.coef, self.exps):
            rest = list(int(v) for v in e)
            k = rest[index]
            rest[index] = 0
            out = out + Polynomial(self.dim, {tuple(rest): c}) * poly ** k
        return out

    # -- evaluation --------------------------------------------------------
    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        if len(self) == 0:
            return 0.0
        return float(np.sum(self.coef * np.prod(x[None, :] ** self.exps, axis=1)))

    def gradient(self, x):
        return np.array([self.derivative(j)(x) for j in range(self.dim)])

    def hessian(self, x):
        d = self.dim
        H = np.zeros((d, d))
        for a in range(d):
            da = self.derivative(a)
            for b in range(a, d):
                H[a, b] = H[b, a] = da.derivative(b)(x)
        return H


def action(dim: int, q_index: int, p_index: int) -> Polynomial:
    """``(q**2 + p**2) / 2`` for the conjugate pair at the given indices."""
    return 0.5 * (Polynomial.variable(dim, q_index, 2) + Polynomial.variable(dim, p_index, 2))


def action_power(dim: int, q_index: int, p_index: int, power: int) -> Polynomial:
    """Binomial expansion of the action to ``power``."""
    terms = {}
    for i in range(power + 1):
        e = [0] * dim
        e[q_index] = 2 * i
        e[p_index] = 2 * (power - i)
        terms[tuple(e)] = comb(power, i) / 2.0 ** power
    return Polynomial(dim, terms)


class PolyTable:
    """Flattened vector of polynomials in the layout the kernels consume."""

    __slots__ = ("coef", "exps", "owner", "field", "n_out", "dim", "n_fields")

    def __init__(self, dim, n_out, coef, exps, owner, field, n_fields):
        self.dim = dim
        self.n_out = n_out
        self.n_fields = n_fields
        self.coef = np.ascontiguousarray(coef, dtype=np.float64)
        self.exps = np.ascontiguousarray(exps, dtype=np.int64).reshape(-1, dim)
        self.owner = np.ascontiguousarray(owner, dtype=np.int64)
        self.field = np.ascontiguousarray(field, dtype=np.int64)

    @classmethod
    def from_fields(cls, dim, fields):
        """``fields[i][slot]`` is the polynomial for output ``slot`` of field ``i``."""
        coef, exps, owner, fidx = [], [], [], []
        n_out = None
        for i, comps in enumerate(fields):
            if n_out is None:
                n_out = len(comps)
            elif len(comps) != n_out:
                raise ValueError("fields have inconsistent lengths")
            for slot, poly in enumerate(comps):
                if len(poly) == 0:
                    continue
                coef.append(poly.coef)
                exps.append(poly.exps)
                owner.append(np.full(len(poly), slot))
                fidx.append(np.full(len(poly), i))
        if not coef:
            return cls(dim, n_out or 0, np.zeros(0), np.zeros((0, dim)), np.zeros(0),
                       np.zeros(0), len(fields))
        return cls(dim, n_out, np.concatenate(coef), np.concatenate(exps),
                   np.concatenate(owner), np.concatenate(fidx), len(fields))

    def combine(self, weights):
        """Arrays for ``sum_i weights[i] * field_i`` ready for the kernels."""
        w = np.asarray(weights, dtype=np.float64)
        return (self.coef * w[self.field], self.exps, self.owner)

    def evaluate(self, x, field=None):
        """Evaluate one field (or all fields stacked) at ``x``."""
        x = np.asarray(x, dtype=np.float64)
        n_fields = self.n_fields
        if field is not None:
            w = np.zeros(n_fields)
            w[field] = 1.0
            return _kernels.eval_table(*self.combine(w), x, self.n_out)
        out = np.empty((n_fields, self.n_out))
        for i in range(n_fields):
            w = np.zeros(n_fields)
            w[i] = 1.0
            out[i] = _kernels.eval_table(*self.combine(w), x, self.n_out)
        return out
