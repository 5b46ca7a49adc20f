"""Monomial observable dictionaries, lifting and coordinate projection."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement
from math import comb

import numpy as np


@dataclass(frozen=True, eq=False)
class Dictionary:
    """Ordered monomials ``x^p`` with ``sum(p) <= max_degree``.

    Row 0 of :attr:`exponents` is the constant, rows ``1..n`` are the
    coordinate functions, and the remaining rows follow graded-lex order.
    """

    n: int
    max_degree: int
    exponents: np.ndarray

    @property
    def size(self) -> int:
        return self.exponents.shape[0]

    @property
    def M(self) -> int:
        return self.size - 1

    def lift(self, x) -> np.ndarray:
        return lift(self, x)

    def project(self, z) -> np.ndarray:
        return project(self, z)

    def jacobian(self, x) -> np.ndarray:
        """Derivative of the lifted vector with respect to ``x``, shape ``(M+1, n)``."""
        x = _check_state(self, x)
        powers = _powers(x, self.max_degree)
        cols = np.arange(self.n)
        jac = np.empty((self.size, self.n))
        for l in range(self.n):
            lowered = self.exponents.copy()
            lowered[:, l] = np.maximum(lowered[:, l] - 1, 0)
            jac[:, l] = self.exponents[:, l] * np.prod(powers[cols, lowered], axis=1)
        return jac

    def projection_matrix(self) -> np.ndarray:
        P = np.zeros((self.n, self.size))
        P[:, 1:self.n + 1] = np.eye(self.n)
        return P

    def to_dict(self) -> dict:
        return {"kind": "monomial", "n": self.n, "max_degree": self.max_degree,
                "exponents": self.exponents.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Dictionary":
        if data.get("kind", "monomial") != "monomial":
            raise ValueError(f"unsupported dictionary kind {data['kind']!r}")
        d = build_monomial_dictionary(int(data["n"]), int(data["max_degree"]))
        if "exponents" in data and not np.array_equal(np.asarray(data["exponents"]), d.exponents):
            raise ValueError("stored exponent table does not match the canonical ordering")
        return d

    def __eq__(self, other):
        if not isinstance(other, Dictionary):
            return NotImplemented
        return (self.n == other.n and self.max_degree == other.max_degree
                and np.array_equal(self.exponents, other.exponents))

    def __hash__(self):
        return hash((self.n, self.max_degree))


def build_monomial_dictionary(n: int, max_degree: int) -> Dictionary:
    if n < 1 or max_degree < 1:
        raise ValueError("n and max_degree must be positive")
    rows = []
    for degree in range(max_degree + 1):
        # combinations over variable indices in increasing order give graded-lex
        # order with x1 leading (x1^2, x1 x2, x2^2, ...)
        for combo in combinations_with_replacement(range(n), degree):
            p = [0] * n
            for i in combo:
                p[i] += 1
            rows.append(p)
    exponents = np.array(rows, dtype=np.int64)
    assert exponents.shape[0] == comb(n + max_degree, n)
    exponents.setflags(write=False)
    return Dictionary(n, max_degree, exponents)


def _check_state(d: Dictionary, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != d.n:
        raise ValueError(f"state has dimension {x.shape[0]}, dictionary expects {d.n}")
    return x


def _powers(x: np.ndarray, degree: int) -> np.ndarray:
    # powers[k, e] = x_k ** e (trailing batch axes preserved)
    out = np.ones((x.shape[0], degree + 1) + x.shape[1:])
    for e in range(1, degree + 1):
        out[:, e] = out[:, e - 1] * x
    return out


def lift(d: Dictionary, x) -> np.ndarray:
    """Evaluate every observable at ``x``.

    ``x`` may be a single state ``(n,)`` or a batch ``(n, d)``; the result has
    shape ``(M+1,)`` or ``(M+1, d)``.
    """
    x = _check_state(d, x)
    powers = _powers(x, d.max_degree)
    cols = np.arange(d.n)
    z = np.prod(powers[cols, d.exponents], axis=1)
    # Coordinates are copied, not recomputed, so project(lift(x)) == x bitwise.
    z[1:d.n + 1] = x
    z[0] = 1.0
    return z


def project(d: Dictionary, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.shape[0] != d.size:
        raise ValueError(f"lifted vector has length {z.shape[0]}, expected {d.size}")
    return z[1:d.n + 1].copy()
