"""Multiplicative weights over the coefficient simplex of low-weight polynomials.

A polynomial of degree <= t and weight <= W on {-1, 1}^d is stored as a
probability vector of length ``2 * C(d, <=t) + 1``: slot 0 is slack, then for
each monomial S (ordered by size, then lexicographically) the pair
``(S, +), (S, -)`` holds ``max(0, c_S)/W`` and ``max(0, -c_S)/W``.
"""

from __future__ import annotations

import dataclasses
import itertools
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .polyrep import SparsePoly, monomial, monomial_indices

DEFAULT_MAX_ENTRIES = 2 ** 26


class MistakeBudgetExceeded(RuntimeError):
    """More updates were requested than the mistake bound allows."""


def count_monomials(d: int, t: int) -> int:
    return sum(math.comb(d, j) for j in range(min(t, d) + 1))


def vector_length(d: int, t: int) -> int:
    return 2 * count_monomials(d, t) + 1


class CoefficientIndex:
    """Layout of the simplex vector for dimension d and degree cap t."""

    def __init__(self, d: int, t: int, max_entries: int = DEFAULT_MAX_ENTRIES):
        if d < 1 or t < 0:
            raise ValueError("need d >= 1 and t >= 0")
        self.d = d
        self.t = min(t, d)
        length = vector_length(d, self.t)
        if length > max_entries:
            raise MemoryError(
                f"vector for d={d}, t={t} has {length} entries, above the cap of {max_entries}"
            )
        self.length = length
        self.monomials = [S for j in range(self.t + 1) for S in itertools.combinations(range(d), j)]
        self._position = {monomial(S): i for i, S in enumerate(self.monomials)}
        width = max(1, self.t)
        # members[i] lists the variables of monomial i, padded with d (never negative)
        self._members = np.full((len(self.monomials), width), d, dtype=np.int64)
        for i, S in enumerate(self.monomials):
            self._members[i, : len(S)] = S

    def __len__(self):
        return self.length

    def slot(self, indices, negative: bool = False) -> int:
        return 1 + 2 * self._position[monomial(indices)] + int(negative)

    def characters(self, y) -> np.ndarray:
        """chi_S(y) for every monomial S in index order."""
        y = np.asarray(y)
        if y.shape != (self.d,):
            raise ValueError(f"query has shape {y.shape}, index expects ({self.d},)")
        neg = np.zeros(self.d + 1, dtype=np.int64)
        neg[: self.d] = y == -1
        parity = neg[self._members].sum(axis=1) & 1
        return 1.0 - 2.0 * parity

    def __eq__(self, other):
        return isinstance(other, CoefficientIndex) and (self.d, self.t) == (other.d, other.t)


def init_pbar(d: int, t: int, index: CoefficientIndex | None = None) -> np.ndarray:
    """Uniform vector; it represents the zero polynomial."""
    length = len(index) if index is not None else vector_length(d, t)
    return np.full(length, 1.0 / length)


def encode_poly(p: SparsePoly, W: float, index: CoefficientIndex, tol: float = 1e-12) -> np.ndarray:
    if p.dimension != index.d:
        raise ValueError(f"polynomial dimension {p.dimension} != index dimension {index.d}")
    if p.degree() > index.t:
        raise ValueError(f"polynomial degree {p.degree()} exceeds cap {index.t}")
    w = p.weight()
    if w > W * (1 + tol):
        raise ValueError(f"polynomial weight {w:g} exceeds W={W:g}")
    v = np.zeros(len(index))
    for mask, c in p.items():
        v[index.slot(monomial_indices(mask), negative=c < 0)] = abs(c) / W
    v[0] = max(0.0, 1.0 - v[1:].sum())
    return v


def decode_pbar(pbar: np.ndarray, W: float, index: CoefficientIndex) -> SparsePoly:
    coefs = W * (pbar[1::2] - pbar[2::2])
    return SparsePoly(index.d, {monomial(S): c for S, c in zip(index.monomials, coefs)})


def encode_query(y, t: int | None = None, index: CoefficientIndex | None = None) -> np.ndarray:
    if index is None:
        if t is None:
            raise ValueError("need either t or an index")
        index = CoefficientIndex(len(y), t)
    chi = index.characters(y)
    v = np.zeros(len(index))
    v[1::2] = chi
    v[2::2] = -chi
    return v


def pbar_answer(pbar: np.ndarray, ybar: np.ndarray, W: float) -> float:
    return float(W * (pbar @ ybar))


def mistake_bound(W: float, d: int, t: int, alpha: float) -> int:
    """ceil(16 W^2 ln(2 C(d, <=t) + 1) / alpha^2), natural log."""
    if W <= 0 or alpha <= 0:
        raise ValueError("W and alpha must be positive")
    return math.ceil(16 * W ** 2 * math.log(vector_length(d, t)) / alpha ** 2)


def kl_divergence(target: np.ndarray, p: np.ndarray) -> float:
    target = np.asarray(target, dtype=float)
    p = np.asarray(p, dtype=float)
    mask = target > 0
    if np.any(p[mask] <= 0):
        return math.inf
    return float(np.sum(target[mask] * np.log(target[mask] / p[mask])))


@dataclass(frozen=True)
class IdcState:
    pbar: np.ndarray
    W: float
    alpha: float
    index: CoefficientIndex
    mistakes: int = 0
    bound: int | None = None

    @classmethod
    def initial(cls, d: int, t: int, W: float, alpha: float, bound: int | None = None,
                max_entries: int = DEFAULT_MAX_ENTRIES) -> "IdcState":
        index = CoefficientIndex(d, t, max_entries)
        if bound is None:
            bound = mistake_bound(W, d, index.t, alpha)
        return cls(init_pbar(d, t, index), float(W), float(alpha), index, 0, bound)

    @property
    def eta(self) -> float:
        return self.alpha / (4 * self.W)

    def answer(self, ybar: np.ndarray) -> float:
        return pbar_answer(self.pbar, ybar, self.W)

    def polynomial(self) -> SparsePoly:
        return decode_pbar(self.pbar, self.W, self.index)


def mw_update(state: IdcState, ybar: np.ndarray, a: float) -> IdcState:
    """One multiplicative-weights step after a mistake, given feedback ``a``."""
    if state.bound is not None and state.mistakes >= state.bound:
        raise MistakeBudgetExceeded(f"mistake bound B={state.bound} already reached")
    r = ybar if a < state.answer(ybar) else -ybar
    p = state.pbar * np.exp(-state.eta * r)
    p /= p.sum()
    return dataclasses.replace(state, pbar=p, mistakes=state.mistakes + 1)


def save_state(path, state: IdcState) -> None:
    meta = {"d": state.index.d, "t": state.index.t, "W": state.W, "alpha": state.alpha,
            "mistakes": state.mistakes, "bound": state.bound}
    with Path(path).open("wb") as fh:
        np.savez(fh, pbar=state.pbar, meta=np.array(json.dumps(meta)))


def load_state(path, max_entries: int = DEFAULT_MAX_ENTRIES) -> IdcState:
    with np.load(Path(path)) as z:
        meta = json.loads(str(z["meta"]))
        pbar = z["pbar"].copy()
    index = CoefficientIndex(meta["d"], meta["t"], max_entries)
    if len(pbar) != len(index):
        raise ValueError("snapshot vector length does not match its index")
    return IdcState(pbar, meta["W"], meta["alpha"], index, meta["mistakes"], meta["bound"])
