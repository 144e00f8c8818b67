"""OR-of-ORs approximations to OR_d, kept unexpanded until asked.

The represented function is ``G(y) = 1 - 2 q(m - Z(y))`` where ``Z`` sums the
exact OR polynomials of ``m`` disjoint variable blocks and ``q`` is a
univariate amplifier with ``q(0) = 0``.
"""

from __future__ import annotations

import dataclasses
import itertools
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .polyrep import (
    ExpansionBudgetExceeded,
    SparsePoly,
    UniPoly,
    chebyshev_amplifier,
    compose_affine,
    interpolation_amplifier,
    exact_or,
    or_value,
    pm1_matrix,
)

INTERPOLATION_MAX_K = 8
DEFAULT_EXPANSION_BUDGET = 200_000
DEFAULT_ENUMERATION_BUDGET = 2_000_000
DEFAULT_CAP_SCALE = 1000.0


@dataclass(frozen=True)
class ApproxSpec:
    dimension: int
    block_count: int
    blocks: tuple[tuple[int, ...], ...]
    amplifier: UniPoly
    amplifier_kind: str
    mode: str
    gamma: float
    k: int | None = None
    padded_size: int | None = None

    def __post_init__(self):
        seen = [i for b in self.blocks for i in b]
        if len(seen) != len(set(seen)):
            raise ValueError("blocks overlap")
        if any(not 0 <= i < self.dimension for i in seen):
            raise ValueError("block variable outside dimension")
        if len(self.blocks) != self.block_count:
            raise ValueError("need exactly block_count blocks")

    @property
    def block_size(self) -> int:
        """Padded block size; phantom slots are always FALSE."""
        if self.padded_size is not None:
            return self.padded_size
        return max(1, max(len(b) for b in self.blocks))

    @property
    def degree_bound(self) -> int:
        return self.amplifier.degree * self.block_size

    @property
    def weight_bound(self) -> float:
        return _weight_bound(self.amplifier, self.blocks)


def _inner_or(d: int, block: Sequence[int]) -> SparsePoly:
    if not block:
        return SparsePoly.constant(d, 1.0)
    return exact_or(len(block)).embed(d, block)


def _weight_bound(q: UniPoly, blocks) -> float:
    # w(pq) <= w(p) w(q); u = m - Z has weight |const| + sum of inner nonconstant weights
    const = 0.0
    nonconst = 0.0
    for b in blocks:
        if b:
            const += 1.0 - (2.0 ** (1 - len(b)) - 1.0)
            nonconst += 2.0 - 2.0 ** (1 - len(b))
    wu = abs(const) + nonconst
    return 1.0 + 2.0 * sum(abs(c) * wu ** j for j, c in enumerate(q.coefficients))


def partition(d: int, m: int) -> tuple[tuple[int, ...], ...]:
    """Contiguous blocks of size ceil(d/m); trailing blocks come up short."""
    size = -(-d // m)
    return tuple(tuple(range(j * size, min((j + 1) * size, d))) for j in range(m))


def _amplifier(kind: str, arity: int, gamma: float) -> tuple[UniPoly, str]:
    if kind == "auto":
        kind = "interpolation" if arity <= INTERPOLATION_MAX_K else "chebyshev"
    if kind == "interpolation":
        return interpolation_amplifier(arity), kind
    if kind == "chebyshev":
        return chebyshev_amplifier(arity, gamma), kind
    raise ValueError(f"unknown amplifier {kind!r}")


def build_restricted_approx(d: int, k: int, m: int, gamma: float, amplifier: str = "auto") -> ApproxSpec:
    """Approximation accurate to ``gamma`` on inputs with at most ``k`` TRUE bits."""
    if not 1 <= k <= m <= d:
        raise ValueError(f"need 1 <= k <= m <= d, got k={k}, m={m}, d={d}")
    q, kind = _amplifier(amplifier, k, gamma)
    return ApproxSpec(d, m, partition(d, m), q, kind, "restricted", float(gamma), int(k))


def build_global_approx(d: int, m: int, gamma: float, amplifier: str = "chebyshev") -> ApproxSpec:
    """Approximation accurate to ``gamma`` on every input of {-1, 1}^d."""
    if not 1 <= m <= d:
        raise ValueError(f"need 1 <= m <= d, got m={m}, d={d}")
    q, kind = _amplifier(amplifier, m, gamma)
    return ApproxSpec(d, m, partition(d, m), q, kind, "global", float(gamma), None)


def evaluate_approx(spec: ApproxSpec, y):
    """Evaluate G without expanding; accepts one input or a matrix of inputs."""
    single = np.ndim(y) == 1
    Y = pm1_matrix(y)
    if Y.shape[1] != spec.dimension:
        raise ValueError(f"inputs have dimension {Y.shape[1]}, spec has {spec.dimension}")
    neg = Y == -1
    true_blocks = np.zeros(Y.shape[0])
    for b in spec.blocks:
        if b:
            true_blocks += neg[:, list(b)].any(axis=1)
    # each TRUE block contributes p = -1, so m - Z = 2 * (number of TRUE blocks)
    out = 1.0 - 2.0 * spec.amplifier(2.0 * true_blocks)
    return float(out[0]) if single else out


def expand(spec: ApproxSpec, max_terms: int | None = DEFAULT_EXPANSION_BUDGET) -> SparsePoly:
    inners = [_inner_or(spec.dimension, b) for b in spec.blocks]
    return compose_affine(spec.amplifier, spec.block_count, inners, max_terms=max_terms)


def restrict_to_record(obj, x):
    """Substitute y_i = 1 wherever the record bit x_i is 0."""
    x = np.asarray(x)
    if not np.all((x == 0) | (x == 1)):
        raise ValueError("record must be a 0/1 vector")
    if isinstance(obj, SparsePoly):
        if len(x) != obj.dimension:
            raise ValueError("record length does not match polynomial dimension")
        return obj.restrict({int(i): 1 for i in np.flatnonzero(x == 0)})
    if isinstance(obj, ApproxSpec):
        if len(x) != obj.dimension:
            raise ValueError("record length does not match spec dimension")
        # dropped variables become phantom FALSE inputs; block_size is kept as padding
        blocks = tuple(tuple(i for i in b if x[i] == 1) for b in obj.blocks)
        return dataclasses.replace(obj, blocks=blocks, padded_size=obj.block_size)
    raise TypeError(f"cannot restrict {type(obj).__name__}")


def query_function(p: SparsePoly) -> SparsePoly:
    """Map an OR approximation to the matching disjunction value (1 - p)/2."""
    return (-p).add_constant(1.0).scale(0.5)


def ball_size(d: int, k: int) -> int:
    return sum(math.comb(d, i) for i in range(min(k, d) + 1))


class HammingBall:
    """All +1/-1 vectors of length d with at most k entries equal to -1."""

    def __init__(self, d: int, k: int):
        if d < 1 or k < 0:
            raise ValueError("need d >= 1 and k >= 0")
        self.d = d
        self.k = min(k, d)

    def __len__(self):
        return ball_size(self.d, self.k)

    def supports(self):
        for r in range(self.k + 1):
            yield from itertools.combinations(range(self.d), r)

    def __iter__(self):
        for S in self.supports():
            y = np.ones(self.d, dtype=int)
            y[list(S)] = -1
            yield y

    def matrix(self) -> np.ndarray:
        Y = np.ones((len(self), self.d), dtype=np.int8)
        for row, S in enumerate(self.supports()):
            Y[row, list(S)] = -1
        return Y


@dataclass
class BallReport:
    max_error: float
    argmax: list[int]
    points: int
    degree: int
    weight_bound: float
    realized_weight: float | None = None
    realized_degree: int | None = None
    passed: bool | None = None


def verify_on_ball(
    spec: ApproxSpec,
    k: int,
    gamma: float | None = None,
    *,
    expand_poly: bool = False,
    enumeration_budget: int = DEFAULT_ENUMERATION_BUDGET,
    expansion_budget: int | None = DEFAULT_EXPANSION_BUDGET,
) -> BallReport:
    """Exhaustive max |G - OR_d| over H_{d,k}."""
    n_points = ball_size(spec.dimension, k)
    if n_points > enumeration_budget:
        raise ValueError(f"H_{{{spec.dimension},{k}}} has {n_points} points, budget is {enumeration_budget}")
    Y = HammingBall(spec.dimension, k).matrix()
    err = np.abs(evaluate_approx(spec, Y) - or_value(Y))
    i = int(np.argmax(err))
    report = BallReport(
        max_error=float(err[i]),
        argmax=[int(v) for v in Y[i]],
        points=n_points,
        degree=spec.degree_bound,
        weight_bound=spec.weight_bound,
    )
    if gamma is not None:
        report.passed = report.max_error <= gamma
    if expand_poly:
        p = expand(spec, expansion_budget)
        report.realized_weight = p.weight()
        report.realized_degree = p.degree()
    return report


@dataclass
class BlockChoice:
    m: int
    degree: int
    weight: float
    realized: bool
    spec: ApproxSpec


def scan_block_counts(
    d: int,
    k: int | None,
    gamma: float,
    mode: str = "restricted",
    amplifier: str | None = None,
    expansion_budget: int | None = DEFAULT_EXPANSION_BUDGET,
) -> list[BlockChoice]:
    """Degree and weight for every admissible m (realized weight when expansion fits)."""
    if mode == "restricted":
        if k is None or not 1 <= k <= d:
            raise ValueError("restricted mode needs 1 <= k <= d")
        candidates = range(k, d + 1)
    elif mode == "global":
        candidates = range(1, d + 1)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    out = []
    for m in candidates:
        if mode == "restricted":
            spec = build_restricted_approx(d, k, m, gamma, amplifier or "auto")
        else:
            spec = build_global_approx(d, m, gamma, amplifier or "chebyshev")
        degree = min(spec.degree_bound, d)
        estimate = ball_size(d, degree)
        weight, realized = spec.weight_bound, False
        if expansion_budget is None or estimate <= expansion_budget:
            try:
                p = expand(spec, expansion_budget)
                weight, degree, realized = p.weight(), p.degree(), True
            except ExpansionBudgetExceeded:
                pass
        out.append(BlockChoice(m, degree, weight, realized, spec))
    return out


def default_weight_cap(d: int, scale: float = DEFAULT_CAP_SCALE) -> float:
    return scale * d ** 0.01


def choose_block_count(
    d: int,
    k: int | None,
    gamma: float,
    mode: str = "restricted",
    weight_cap: float | None = None,
    amplifier: str | None = None,
    expansion_budget: int | None = DEFAULT_EXPANSION_BUDGET,
) -> BlockChoice:
    """Pick m minimising (degree, weight) among choices with weight <= cap."""
    cap = default_weight_cap(d) if weight_cap is None else weight_cap
    scan = scan_block_counts(d, k, gamma, mode, amplifier, expansion_budget)
    feasible = [c for c in scan if c.weight <= cap]
    if not feasible:
        lightest = min(c.weight for c in scan)
        raise ValueError(f"no block count meets weight cap {cap:g}; lightest choice weighs {lightest:g}")
    return min(feasible, key=lambda c: (c.degree, c.weight, c.m))
