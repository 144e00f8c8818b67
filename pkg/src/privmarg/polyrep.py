"""Sparse multilinear polynomials over {-1, 1}^d and small univariate polynomials.

Monomials are stored as integer bitmasks: bit ``i`` set means variable ``i``
(0-based) appears in the monomial, and ``0`` is the constant term. Products
reduce with ``y_i**2 = 1``, which makes monomial multiplication an XOR.

All values use the convention ``-1 = TRUE`` and ``+1 = FALSE``.
"""

from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

PRUNE_TOL = 1e-15


class ExpansionBudgetExceeded(ValueError):
    """Raised when an expansion would produce more terms than allowed."""


def monomial(indices: Iterable[int]) -> int:
    """Bitmask for the monomial prod_{i in indices} y_i (0-based indices)."""
    mask = 0
    for i in indices:
        if i < 0:
            raise ValueError(f"negative variable index {i}")
        bit = 1 << i
        if mask & bit:
            raise ValueError(f"repeated variable index {i}")
        mask |= bit
    return mask


def monomial_indices(mask: int) -> tuple[int, ...]:
    out = []
    i = 0
    while mask:
        if mask & 1:
            out.append(i)
        mask >>= 1
        i += 1
    return tuple(out)


def _neg_mask(y) -> int:
    mask = 0
    for i, v in enumerate(y):
        if v == -1:
            mask |= 1 << i
        elif v != 1:
            raise ValueError(f"entry {i} of y is {v!r}, expected +1 or -1")
    return mask


def pm1_matrix(Y) -> np.ndarray:
    Y = np.asarray(Y)
    if Y.ndim == 1:
        Y = Y[None, :]
    if not np.all((Y == 1) | (Y == -1)):
        raise ValueError("inputs must be +1/-1 vectors")
    return Y


class SparsePoly:
    """Multilinear real polynomial ``sum_S c_S prod_{i in S} y_i``.

    Instances are treated as immutable; arithmetic returns new objects.
    """

    __slots__ = ("dimension", "_terms")

    def __init__(self, dimension: int, terms: Mapping[int, float] | None = None):
        if dimension < 0:
            raise ValueError("dimension must be non-negative")
        self.dimension = int(dimension)
        limit = 1 << self.dimension
        clean = {}
        for mask, c in (terms or {}).items():
            mask = int(mask)
            if mask < 0 or mask >= limit:
                raise ValueError(
                    f"monomial {monomial_indices(mask)} outside dimension {dimension}"
                )
            c = float(c)
            if abs(c) > PRUNE_TOL:
                clean[mask] = c
        self._terms = clean

    # construction helpers
    @classmethod
    def constant(cls, dimension: int, value: float) -> "SparsePoly":
        return cls(dimension, {0: value})

    @classmethod
    def variable(cls, dimension: int, i: int) -> "SparsePoly":
        if not 0 <= i < dimension:
            raise ValueError(f"variable {i} outside dimension {dimension}")
        return cls(dimension, {1 << i: 1.0})

    @classmethod
    def from_indices(cls, dimension: int, terms: Mapping[Sequence[int], float]) -> "SparsePoly":
        return cls(dimension, {monomial(S): c for S, c in terms.items()})

    # inspection
    @property
    def terms(self) -> dict[int, float]:
        return dict(self._terms)

    def items(self):
        return self._terms.items()

    def coefficient(self, indices: Iterable[int] = ()) -> float:
        return self._terms.get(monomial(indices), 0.0)

    def __len__(self) -> int:
        return len(self._terms)

    def degree(self) -> int:
        if not self._terms:
            return 0
        return max(m.bit_count() for m in self._terms)

    def weight(self) -> float:
        return float(sum(abs(c) for c in self._terms.values()))

    def nonconstant_weight(self) -> float:
        return float(sum(abs(c) for m, c in self._terms.items() if m))

    def is_zero(self) -> bool:
        return not self._terms

    # evaluation
    def evaluate(self, y) -> float:
        if len(y) != self.dimension:
            raise ValueError(f"input has length {len(y)}, polynomial has dimension {self.dimension}")
        neg = _neg_mask(y)
        total = 0.0
        for mask, c in self._terms.items():
            total += -c if (mask & neg).bit_count() & 1 else c
        return total

    __call__ = evaluate

    def evaluate_many(self, Y, chunk: int = 2048) -> np.ndarray:
        """Vectorised evaluation on the rows of a +1/-1 matrix."""
        Y = pm1_matrix(Y)
        if Y.shape[1] != self.dimension:
            raise ValueError(f"inputs have dimension {Y.shape[1]}, polynomial has {self.dimension}")
        if not self._terms:
            return np.zeros(Y.shape[0])
        if self.dimension > 64:
            return np.array([self.evaluate(row) for row in Y])
        masks = np.fromiter(self._terms.keys(), dtype=np.uint64, count=len(self._terms))
        coefs = np.fromiter(self._terms.values(), dtype=float, count=len(self._terms))
        weights = np.uint64(1) << np.arange(self.dimension, dtype=np.uint64)
        negs = ((Y == -1).astype(np.uint64) * weights).sum(axis=1, dtype=np.uint64)
        out = np.empty(Y.shape[0])
        for start in range(0, Y.shape[0], chunk):
            block = negs[start:start + chunk]
            parity = np.bitwise_count(block[:, None] & masks[None, :]) & 1
            out[start:start + chunk] = (1.0 - 2.0 * parity) @ coefs
        return out

    # arithmetic
    def _check(self, other: "SparsePoly"):
        if not isinstance(other, SparsePoly):
            raise TypeError(f"expected SparsePoly, got {type(other).__name__}")
        if other.dimension != self.dimension:
            raise ValueError(f"dimension mismatch: {self.dimension} vs {other.dimension}")

    def add(self, other: "SparsePoly") -> "SparsePoly":
        self._check(other)
        out = dict(self._terms)
        for m, c in other._terms.items():
            out[m] = out.get(m, 0.0) + c
        return SparsePoly(self.dimension, out)

    def scale(self, factor: float) -> "SparsePoly":
        return SparsePoly(self.dimension, {m: factor * c for m, c in self._terms.items()})

    def add_constant(self, value: float) -> "SparsePoly":
        out = dict(self._terms)
        out[0] = out.get(0, 0.0) + value
        return SparsePoly(self.dimension, out)

    def multiply(self, other: "SparsePoly", max_terms: int | None = None) -> "SparsePoly":
        self._check(other)
        out: dict[int, float] = {}
        for m1, c1 in self._terms.items():
            for m2, c2 in other._terms.items():
                m = m1 ^ m2
                out[m] = out.get(m, 0.0) + c1 * c2
            if max_terms is not None and len(out) > max_terms:
                raise ExpansionBudgetExceeded(
                    f"product exceeds {max_terms} terms; evaluate without expanding"
                )
        return SparsePoly(self.dimension, out)

    def __add__(self, other):
        if isinstance(other, (int, float)):
            return self.add_constant(other)
        return self.add(other)

    __radd__ = __add__

    def __neg__(self):
        return self.scale(-1.0)

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            return self.add_constant(-other)
        return self.add(other.scale(-1.0))

    def __rsub__(self, other):
        return (-self).add_constant(other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return self.scale(other)
        return self.multiply(other)

    __rmul__ = __mul__

    def restrict(self, fixed: Mapping[int, int]) -> "SparsePoly":
        """Substitute constants for variables: ``fixed`` maps index -> +1/-1."""
        keep = ~0
        flip = 0
        for i, v in fixed.items():
            if v not in (1, -1):
                raise ValueError(f"variable {i} fixed to {v!r}, expected +1 or -1")
            keep &= ~(1 << i)
            if v == -1:
                flip |= 1 << i
        out: dict[int, float] = {}
        for m, c in self._terms.items():
            if (m & flip).bit_count() & 1:
                c = -c
            m2 = m & keep
            out[m2] = out.get(m2, 0.0) + c
        return SparsePoly(self.dimension, out)

    def embed(self, dimension: int, positions: Sequence[int]) -> "SparsePoly":
        """Relabel variable ``j`` as ``positions[j]`` inside a larger dimension."""
        if len(positions) != self.dimension:
            raise ValueError("need one position per variable")
        out = {}
        for m, c in self._terms.items():
            out[monomial(positions[j] for j in monomial_indices(m))] = c
        return SparsePoly(dimension, out)

    def almost_equal(self, other: "SparsePoly", tol: float = 1e-9) -> bool:
        self._check(other)
        keys = set(self._terms) | set(other._terms)
        return all(abs(self._terms.get(m, 0.0) - other._terms.get(m, 0.0)) <= tol for m in keys)

    def __repr__(self):
        return f"SparsePoly(dimension={self.dimension}, terms={len(self._terms)}, degree={self.degree()})"

    # text format
    def to_text(self) -> str:
        """One ``i,j,... : coefficient`` line per term, 1-based, ``const`` for the constant."""
        lines = []
        for m in sorted(self._terms, key=lambda m: (m.bit_count(), monomial_indices(m))):
            idx = monomial_indices(m)
            key = ",".join(str(i + 1) for i in idx) if idx else "const"
            lines.append(f"{key} : {self._terms[m]!r}")
        return "\n".join(lines) + ("\n" if lines else "")

    @classmethod
    def from_text(cls, text: str, dimension: int) -> "SparsePoly":
        terms: dict[int, float] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            try:
                key, value = line.split(":")
                key = key.strip()
                idx = [] if key == "const" else [int(tok) - 1 for tok in key.split(",")]
                m = monomial(idx)
                terms[m] = terms.get(m, 0.0) + float(value)
            except ValueError as exc:
                raise ValueError(f"line {lineno}: cannot parse {line!r}") from exc
        return cls(dimension, terms)


def exact_or(d: int) -> SparsePoly:
    """``2 prod (1 + x_i)/2 - 1``: +1 on the all-FALSE input, -1 otherwise."""
    if d < 1:
        raise ValueError("exact_or needs d >= 1")
    c = 2.0 ** (1 - d)
    terms = {m: c for m in range(1, 1 << d)}
    terms[0] = c - 1.0
    return SparsePoly(d, terms)


def or_value(Y) -> np.ndarray:
    """Truth table of OR under the -1 = TRUE convention, row-wise."""
    Y = pm1_matrix(Y)
    return np.where((Y == -1).any(axis=1), -1.0, 1.0)


class UniPoly:
    """Univariate polynomial ``c_0 + c_1 x + ... + c_t x^t``."""

    __slots__ = ("coefficients",)

    def __init__(self, coefficients: Sequence[float]):
        coefs = [float(c) for c in coefficients]
        while len(coefs) > 1 and coefs[-1] == 0.0:
            coefs.pop()
        self.coefficients = tuple(coefs) if coefs else (0.0,)

    @property
    def degree(self) -> int:
        if len(self.coefficients) == 1 and self.coefficients[0] == 0.0:
            return 0
        return len(self.coefficients) - 1

    def __call__(self, x):
        acc = np.zeros_like(np.asarray(x, dtype=float))
        for c in reversed(self.coefficients):
            acc = acc * x + c
        return acc if np.ndim(acc) else float(acc)

    def weight(self) -> float:
        return float(sum(abs(c) for c in self.coefficients))

    def max_abs_coefficient(self) -> float:
        return float(max(abs(c) for c in self.coefficients))

    def __repr__(self):
        return f"UniPoly(degree={self.degree}, coefficients={list(self.coefficients)})"


def chebyshev_degree(k: int, gamma: float) -> int:
    """Smallest t with |T_t(mu(0))| >= 2/gamma, mu mapping [1, 2k] onto [-1, 1]."""
    _check_amplifier_args(k, gamma)
    x0 = (2 * k + 1) / (2 * k - 1)
    target = 2.0 / gamma
    prev, cur, t = 1.0, x0, 1
    while cur < target:
        prev, cur = cur, 2 * x0 * cur - prev
        t += 1
    return t


def _check_amplifier_args(k, gamma):
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    if not 0 < gamma < 1:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma!r}")


def chebyshev_amplifier(k: int, gamma: float) -> UniPoly:
    """Polynomial q with q(0) = 0 and |q(x) - 1| <= gamma/2 on [1, 2k].

    Built as ``q = 1 - T_t(mu(x)) / T_t(mu(0))`` where ``mu`` maps [1, 2k]
    affinely onto [-1, 1] and t is the smallest degree with
    ``|T_t(mu(0))| >= 2/gamma``.
    """
    t = chebyshev_degree(k, gamma)
    a = 2.0 / (2 * k - 1)
    b = -(2 * k + 1) / (2 * k - 1)
    mu = np.array([b, a])
    prev, cur = np.array([1.0]), mu
    for _ in range(t - 1):
        nxt = 2.0 * np.polynomial.polynomial.polymul(mu, cur)
        nxt[: len(prev)] -= prev
        prev, cur = cur, nxt
    coefs = -cur / _chebyshev_value(t, b)
    # 1 - s has constant 1 - T_t(b)/T_t(b) = 0; pin it rather than trust rounding
    coefs[0] = 0.0
    return UniPoly(coefs)


def _chebyshev_value(t: int, x: float) -> float:
    prev, cur = 1.0, x
    if t == 0:
        return prev
    for _ in range(t - 1):
        prev, cur = cur, 2 * x * cur - prev
    return cur


def interpolation_amplifier(k: int) -> UniPoly:
    """Degree-k polynomial with q(0) = 0 and q(2i) = 1 for i = 1..k.

    Closed form ``1 - prod_{i=1}^k (1 - x/(2i))``, expanded in exact rationals.
    """
    if int(k) != k or k < 1:
        raise ValueError(f"k must be a positive integer, got {k!r}")
    prod = [Fraction(1)]
    for i in range(1, k + 1):
        factor = Fraction(-1, 2 * i)
        nxt = [Fraction(0)] * (len(prod) + 1)
        for j, c in enumerate(prod):
            nxt[j] += c
            nxt[j + 1] += c * factor
        prod = nxt
    coefs = [-c for c in prod]
    coefs[0] = Fraction(0)
    return UniPoly([float(c) for c in coefs])


def compose_affine(
    q: UniPoly,
    m: float,
    inners: Sequence[SparsePoly],
    max_terms: int | None = None,
) -> SparsePoly:
    """Expand ``1 - 2 q(m - sum_i inners_i)`` as a multilinear polynomial."""
    if not inners:
        raise ValueError("need at least one inner polynomial")
    d = inners[0].dimension
    total = SparsePoly(d)
    for p in inners:
        total = total.add(p)
    u = (-total).add_constant(m)
    acc = SparsePoly.constant(d, q.coefficients[-1])
    for c in reversed(q.coefficients[:-1]):
        acc = acc.multiply(u, max_terms=max_terms).add_constant(c)
        if max_terms is not None and len(acc) > max_terms:
            raise ExpansionBudgetExceeded(f"expansion exceeds {max_terms} terms")
    return acc.scale(-2.0).add_constant(1.0)
