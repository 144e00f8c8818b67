"""Dual witnesses for weight-degree lower bounds on OR restricted to a Hamming ball.

OR is the +1/-1 valued function with -1 meaning TRUE, so OR(1, ..., 1) = 1 and
every other input maps to -1. A composed input in {-1, 1}^(k d') is read as k
contiguous blocks of length d'.
"""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .approx import HammingBall, ball_size
from .lp import FEASIBILITY_TOL, linprog_max
from .polyrep import or_value

DEFAULT_ENUMERATION_BUDGET = 5_000_000
PRIMAL_MAX_MONOMIALS = 200
PRIMAL_MAX_POINTS = 500
OUTER_MAX_ARITY = 12
CHECK_TOL = 1e-9

_THREADS = 1


def set_threads(n: int) -> None:
    """Worker threads for the monomial scan in certify_lower_bound."""
    global _THREADS
    _THREADS = max(1, int(n))


class WitnessError(ValueError):
    """A witness fails one of its defining conditions."""


class OuterInfeasible(WitnessError):
    """No outer witness exists at the requested degree and margin."""


class EnumerationBudgetExceeded(ValueError):
    pass


def _subsets(d: int, t: int):
    for j in range(min(t, d) + 1):
        yield from itertools.combinations(range(d), j)


def _cube(k: int) -> np.ndarray:
    """All of {-1, 1}^k, row r has -1 at bit i when bit i of r is set."""
    r = np.arange(2 ** k)[:, None]
    return np.where((r >> np.arange(k)) & 1, -1, 1).astype(np.int8)


@dataclass(frozen=True)
class InnerWitness:
    dimension: int
    points: np.ndarray
    weights: tuple[Fraction, ...]

    @property
    def values(self) -> np.ndarray:
        return np.array([float(w) for w in self.weights])


def build_inner_witness(d: int) -> InnerWitness:
    """Mass 1/2 on the all-ones point and 1/(2d) on each point with a single -1."""
    if d < 1:
        raise ValueError("need d >= 1")
    points = np.ones((d + 1, d), dtype=np.int8)
    points[np.arange(1, d + 1), np.arange(d)] = -1
    weights = (Fraction(1, 2),) + (Fraction(1, 2 * d),) * d
    return InnerWitness(d, points, weights)


def verify_inner_witness(mu: InnerWitness, t: int) -> Fraction | float:
    """Exact certified w: 1 / max over |S| <= t of |sum mu f chi_S|."""
    if any(w < 0 for w in mu.weights) or sum(mu.weights) != 1:
        raise WitnessError("inner witness is not a probability distribution")
    f = [int(v) for v in or_value(mu.points)]
    if sum(w * fv for w, fv in zip(mu.weights, f)) != 0:
        raise WitnessError("inner witness is not balanced against OR")
    neg = mu.points == -1
    worst = Fraction(0)
    for S in _subsets(mu.dimension, t):
        parity = neg[:, list(S)].sum(axis=1) % 2 if S else np.zeros(len(f), dtype=int)
        corr = sum(w * fv * (1 - 2 * int(p)) for w, fv, p in zip(mu.weights, f, parity))
        worst = max(worst, abs(corr))
    return math.inf if worst == 0 else 1 / worst


@dataclass(frozen=True)
class OuterWitness:
    k: int
    gamma: float
    degree: int
    values: np.ndarray  # indexed like _cube(k)

    @property
    def points(self) -> np.ndarray:
        return _cube(self.k)

    @property
    def correlation(self) -> float:
        return float(self.values @ or_value(self.points))


def _moment_matrix(Y: np.ndarray, D: int) -> np.ndarray:
    """Rows chi_T(y) for every |T| < D."""
    rows = [np.prod(Y[:, list(T)], axis=1) if T else np.ones(len(Y)) for T in _subsets(Y.shape[1], D - 1)]
    return np.array(rows, dtype=float).reshape(-1, len(Y))


def check_outer_witness(w: OuterWitness, tol: float = CHECK_TOL) -> None:
    """Re-verify the three defining conditions without the solver."""
    if abs(np.abs(w.values).sum() - 1) > tol:
        raise WitnessError("outer witness is not L1-normalised")
    if w.degree > 0:
        moments = _moment_matrix(w.points, w.degree) @ w.values
        if np.abs(moments).max() > tol:
            raise WitnessError(f"outer witness correlates with a monomial of degree < {w.degree}")
    if not w.correlation > 2 * w.gamma:
        raise WitnessError(f"outer correlation {w.correlation:.6g} is not above 2*gamma")


def solve_outer_witness(k: int, gamma: float, D: int) -> OuterWitness:
    """Maximise sum Gamma OR_k subject to L1 norm 1 and no correlation below degree D."""
    if not 1 <= k <= OUTER_MAX_ARITY:
        raise ValueError(f"need 1 <= k <= {OUTER_MAX_ARITY}")
    if D < 0:
        raise ValueError("degree must be non-negative")
    Y = _cube(k)
    F = or_value(Y).astype(float)
    N = len(Y)
    # Gamma = plus - minus
    c = np.concatenate([F, -F])
    eq = [np.ones(2 * N)]
    if D > 0:
        M = _moment_matrix(Y, D)
        eq.extend(np.hstack([M, -M]))
    b = np.zeros(len(eq))
    b[0] = 1.0
    res = linprog_max(c, A_eq=np.array(eq), b_eq=b)
    if res.status != "optimal" or res.objective <= 2 * gamma + FEASIBILITY_TOL:
        best = res.objective if res.status == "optimal" else None
        raise OuterInfeasible(f"no outer witness for k={k}, D={D}, gamma={gamma:g} (best correlation {best})")
    gam = res.x[:N] - res.x[N:]
    gam /= np.abs(gam).sum()
    out = OuterWitness(k, float(gamma), int(D), gam)
    check_outer_witness(out)
    return out


def max_outer_degree(k: int, gamma: float) -> int:
    """Largest D admitting an outer witness (D = 0 always does)."""
    D = 0
    for cand in range(1, k + 1):
        try:
            solve_outer_witness(k, gamma, cand)
        except OuterInfeasible:
            break
        D = cand
    return D


@dataclass(frozen=True)
class CombinedWitness:
    dimension: int
    k: int
    points: np.ndarray
    values: np.ndarray

    def __len__(self):
        return len(self.values)

    @property
    def l1(self) -> float:
        return float(np.abs(self.values).sum())

    def correlation(self) -> float:
        return float(self.values @ or_value(self.points))

    def in_ball(self) -> bool:
        return bool(((self.points == -1).sum(axis=1) <= self.k).all())


def combine(outer: OuterWitness, inner: InnerWitness, k: int | None = None) -> CombinedWitness:
    """Psi(Y_1..Y_k) = 2^k Gamma(OR(Y_1), ..., OR(Y_k)) prod mu(Y_i)."""
    k = outer.k if k is None else k
    if k != outer.k:
        raise ValueError(f"outer witness has arity {outer.k}, not {k}")
    dp = inner.dimension
    f_inner = or_value(inner.points)
    mu = inner.values
    lookup = {tuple(row): v for row, v in zip(outer.points.tolist(), outer.values)}
    rows, vals = [], []
    for combo in itertools.product(range(dp + 1), repeat=k):
        z = tuple(int(f_inner[i]) for i in combo)
        rows.append(np.concatenate([inner.points[i] for i in combo]))
        vals.append(2 ** k * lookup[z] * np.prod([mu[i] for i in combo]))
    return CombinedWitness(k * dp, k, np.array(rows, dtype=np.int8), np.array(vals))


def theoretical_cutoff(gamma: float, k: int, w: float, D: int) -> float:
    """gamma 2^-k w^(D/2)."""
    return gamma * 2.0 ** -k * w ** (D / 2)


@dataclass
class CertificateReport:
    passed: bool
    normalised: bool
    l1: float
    correlation: float
    max_character: float
    worst_monomial: list[int]
    margin: float
    W: float
    gamma: float
    s: int
    monomials_checked: int
    flip_W: float
    certified_degree_lower_bound: int | None = None
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "extra"}
        out.update(self.extra)
        return out


def _scan(values: np.ndarray, Y: np.ndarray, subsets) -> tuple[float, tuple]:
    best, arg = -1.0, ()
    for S in subsets:
        chi = np.prod(Y[:, list(S)], axis=1, dtype=np.int64) if S else np.ones(len(Y))
        v = abs(float(values @ chi))
        if v > best:
            best, arg = v, S
    return best, arg


def _character_sums(psi: CombinedWitness, s: int, budget: int):
    count = ball_size(psi.dimension, s)
    if count > budget:
        raise EnumerationBudgetExceeded(f"{count} monomials of degree <= {s}, budget is {budget}")
    Y = psi.points.astype(np.int8)
    subsets = list(_subsets(psi.dimension, s))
    if _THREADS == 1 or count < 1000:
        best, arg = _scan(psi.values, Y, subsets)
    else:
        chunks = [subsets[i::_THREADS] for i in range(_THREADS)]
        with ThreadPoolExecutor(_THREADS) as pool:
            parts = list(pool.map(lambda c: _scan(psi.values, Y, c), chunks))
        # deterministic tie-break: first monomial in enumeration order
        order = {S: i for i, S in enumerate(subsets)}
        best = max(b for b, _ in parts)
        arg = min((a for b, a in parts if b == best), key=order.__getitem__)
    return best, arg, count


def certify_lower_bound(psi: CombinedWitness, gamma: float, W: float, s: int,
                        budget: int = DEFAULT_ENUMERATION_BUDGET, tol: float = CHECK_TOL) -> CertificateReport:
    """Check sum |Psi| = 1 and sum Psi OR - W |sum Psi chi_S| > gamma for all |S| <= s."""
    l1 = psi.l1
    corr = psi.correlation()
    best, arg, count = _character_sums(psi, s, budget)
    margin = corr - W * best - gamma
    normalised = abs(l1 - 1) <= tol
    passed = normalised and margin > 0 and psi.in_ball()
    flip = math.inf if best <= tol else (corr - gamma) / best
    return CertificateReport(
        passed=passed, normalised=normalised, l1=l1, correlation=corr, max_character=best,
        worst_monomial=[i + 1 for i in arg], margin=margin, W=float(W), gamma=float(gamma), s=int(s),
        monomials_checked=count, flip_W=flip,
        certified_degree_lower_bound=s + 1 if passed else None,
    )


def _primal_system(d: int, k: int, gamma: float, t: int):
    n_mon = ball_size(d, t)
    n_pts = ball_size(d, k)
    if n_mon > PRIMAL_MAX_MONOMIALS or n_pts > PRIMAL_MAX_POINTS:
        raise EnumerationBudgetExceeded(
            f"primal LP with {n_mon} monomials over {n_pts} points exceeds the "
            f"{PRIMAL_MAX_MONOMIALS}/{PRIMAL_MAX_POINTS} caps")
    Y = HammingBall(d, k).matrix()
    X = _moment_matrix(Y, t + 1).T  # points x monomials
    f = or_value(Y).astype(float)
    # lambda = plus - minus; |f - X lambda| <= gamma
    A = np.vstack([np.hstack([X, -X]), np.hstack([-X, X])])
    b = np.concatenate([f + gamma, gamma - f])
    return A, b, n_mon


@dataclass
class PrimalResult:
    exists: bool
    status: str
    coefficients: np.ndarray | None
    weight: float | None
    iterations: int


def primal_feasibility(d: int, k: int, gamma: float, W: float, t: int) -> PrimalResult:
    """Is there a degree-t polynomial of weight <= W within gamma of OR_d on H_{d,k}?"""
    A, b, n_mon = _primal_system(d, k, gamma, t)
    A = np.vstack([A, np.ones(2 * n_mon)])
    b = np.append(b, W)
    res = linprog_max(np.zeros(2 * n_mon), A, b)
    if not res.feasible:
        return PrimalResult(False, res.status, None, None, res.iterations)
    lam = res.x[:n_mon] - res.x[n_mon:]
    return PrimalResult(True, res.status, lam, float(np.abs(lam).sum()), res.iterations)


def minimum_weight(d: int, k: int, gamma: float, t: int) -> float:
    """Smallest weight of a degree-t polynomial within gamma of OR_d on H_{d,k} (inf if none)."""
    A, b, n_mon = _primal_system(d, k, gamma, t)
    res = linprog_max(-np.ones(2 * n_mon), A, b)
    if res.status == "infeasible":
        return math.inf
    return -res.objective


def lower_bound_certificate(d: int, k: int, gamma: float, W: float | None = None, s: int = 1,
                            D: int | None = None, check_primal: bool = True) -> dict:
    """Build inner, outer and combined witnesses for OR_d on H_{d,k} and certify degree > s."""
    if d % k:
        raise ValueError(f"d={d} is not a multiple of k={k}")
    dp = d // k
    if D is None:
        D = max_outer_degree(k, gamma)
    if D < 1:
        raise OuterInfeasible(f"no outer witness of positive degree for k={k}, gamma={gamma:g}")
    t = max(1, math.ceil(2 * s / D))
    if (t * D) // 2 < s:
        raise ValueError(f"degree s={s} is not reachable with D={D}")
    inner = build_inner_witness(dp)
    w = verify_inner_witness(inner, t)
    outer = solve_outer_witness(k, gamma, D)
    psi = combine(outer, inner, k)
    cutoff = theoretical_cutoff(gamma, k, float(w), D)
    report = certify_lower_bound(psi, gamma, cutoff if W is None else W, s)
    report.extra = {
        "d": d, "k": k, "inner_dimension": dp, "inner_degree": t, "inner_weight": float(w),
        "outer_degree": D, "outer_correlation": outer.correlation, "support": len(psi),
        "W_cutoff": cutoff,
    }
    if check_primal and ball_size(d, s) <= PRIMAL_MAX_MONOMIALS and ball_size(d, k) <= PRIMAL_MAX_POINTS:
        primal = primal_feasibility(d, k, gamma, report.W, s)
        report.extra["primal"] = "exists" if primal.exists else "not-exists"
    return report.as_dict()
