"""Differentially private release of k-way marginals.

The mechanism answers each query from the current multiplicative-weights
polynomial unless a sparse-vector test says the guess is off; only then does it
release a noisy true answer and update the polynomial. Noise is calibrated to
the number of allowed updates (the mistake budget), not to the number of
queries.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import approx
from .data import (
    Database,
    Query,
    all_marginals,
    check_binary_array,
    count_marginals,
    extend_with_complements,
    query_index,
    true_answer_disjunction,
)
from .mwidc import (
    DEFAULT_MAX_ENTRIES,
    IdcState,
    MistakeBudgetExceeded,
    encode_query,
    mistake_bound,
    mw_update,
    vector_length,
)
from .polyrep import SparsePoly, monomial

# sigma_T = THRESHOLD_CONSTANT * sqrt(8 B) ln(4/delta) / (eps n); see noise_scales
THRESHOLD_CONSTANT = 2.5
REPORT_SCHEMA = "privmarg.release/1"


class InsufficientDataError(RuntimeError):
    """Database smaller than the size the accuracy guarantee needs."""


class QueryBudgetExhausted(RuntimeError):
    pass


class NotConverged(RuntimeError):
    pass


@dataclass(frozen=True)
class PrivacyParams:
    epsilon: float
    delta: float
    alpha: float
    beta: float
    queries: int
    n: int

    def __post_init__(self):
        for name in ("epsilon", "alpha", "beta"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not 0 < self.delta < 1:
            raise ValueError("delta must lie in (0, 1)")
        if self.queries < 1 or self.n < 1:
            raise ValueError("queries and n must be at least 1")


def required_database_size(W: float, d: int, t: int, *, alpha: float, beta: float,
                           epsilon: float, delta: float, queries: float) -> float:
    """128 W ln(l/beta) ln(4/delta) sqrt(ln(2 C(d,<=t) + 1)) / (alpha^2 eps)."""
    return (128 * W * math.log(queries / beta) * math.log(4 / delta)
            / (alpha ** 2 * epsilon) * math.sqrt(math.log(vector_length(d, t))))


@dataclass
class SizeCheck:
    ok: bool
    required_n: float
    n: int


def check_database_size(params: PrivacyParams, W: float, d: int, t: int) -> SizeCheck:
    req = required_database_size(W, d, t, alpha=params.alpha, beta=params.beta,
                                 epsilon=params.epsilon, delta=params.delta, queries=params.queries)
    return SizeCheck(params.n >= req, req, params.n)


@dataclass(frozen=True)
class NoiseScales:
    threshold: float
    query: float
    answer: float
    epoch_epsilon: float

    @classmethod
    def off(cls) -> "NoiseScales":
        return cls(0.0, 0.0, 0.0, math.inf)


def noise_scales(epsilon: float, delta: float, n: int, budget: int) -> NoiseScales:
    """Laplace scales for ``budget`` sparse-vector epochs on a sensitivity-1/n statistic.

    Each epoch is an above-threshold test (threshold noise b, query noise 2b,
    which is 2/(n b)-DP) followed by one answer with noise 2b (1/(2 n b)-DP),
    so it costs eps_e = 2.5 / (n b). Choosing eps_e = eps / (sqrt(8B) ln(4/delta))
    keeps advanced composition over B epochs within (eps, delta) while
    eps <= 2 ln(4/delta)^2; larger eps is clipped to that value.
    """
    if budget < 1:
        raise ValueError("mistake budget must be at least 1")
    eps = min(epsilon, 2 * math.log(4 / delta) ** 2)
    eps_e = eps / (math.sqrt(8 * budget) * math.log(4 / delta))
    b = THRESHOLD_CONSTANT / (n * eps_e)
    return NoiseScales(b, 2 * b, 2 * b, eps_e)


def composed_epsilon(epoch_epsilon: float, budget: int, delta: float) -> float:
    """Advanced composition of ``budget`` epoch_epsilon-DP epochs at slack delta."""
    e = epoch_epsilon
    return math.sqrt(2 * budget * math.log(1 / delta)) * e + budget * e * math.expm1(e)


def laplace(rng: np.random.Generator, scale: float, size=None):
    if scale == 0:
        return 0.0 if size is None else np.zeros(size)
    return rng.laplace(0.0, scale, size)


@dataclass
class FamilyPlan:
    """Polynomial family used by the mechanism, over the 2d extended columns."""

    dimension: int
    k: int
    m: int
    degree: int
    W: float
    or_weight: float
    realized: bool
    gamma: float
    amplifier: str

    @property
    def vector_length(self) -> int:
        return vector_length(self.dimension, self.degree)


def plan_family(d: int, k: int, alpha: float, *, amplifier: str = "auto", block_count: int | None = None,
                weight_cap: float | None = None,
                expansion_budget: int | None = approx.DEFAULT_EXPANSION_BUDGET) -> FamilyPlan:
    """Restricted OR approximation at OR-side error alpha/2, hence family error alpha/4."""
    dim = 2 * d
    if not 1 <= k <= d:
        raise ValueError(f"need 1 <= k <= d, got k={k}, d={d}")
    gamma = alpha / 2
    if block_count is None:
        choice = approx.choose_block_count(dim, k, gamma, "restricted", weight_cap, amplifier, expansion_budget)
    else:
        spec = approx.build_restricted_approx(dim, k, block_count, gamma, amplifier)
        degree, weight, realized = min(spec.degree_bound, dim), spec.weight_bound, False
        try:
            p = approx.expand(spec, expansion_budget)
            degree, weight, realized = p.degree(), p.weight(), True
        except approx.ExpansionBudgetExceeded:
            pass
        choice = approx.BlockChoice(block_count, degree, weight, realized, spec)
    # restriction to a record never increases weight, and (1 - p)/2 adds at most 1/2
    W = (1.0 + choice.weight) / 2.0
    return FamilyPlan(dim, k, choice.m, max(choice.degree, 1), W, choice.weight, choice.realized,
                      gamma, choice.spec.amplifier_kind)


BATCH_MAX_CELLS = 2 ** 25


@dataclass
class _Batch:
    ybars: np.ndarray
    truths: np.ndarray
    flips: np.ndarray


@dataclass
class Transcript:
    entries: list[tuple[str, float, str]] = field(default_factory=list)


class Mechanism:
    """Online sparse-vector mechanism driving the MW state.

    The database is read only through :meth:`_true_answer`, which counts
    accesses so the access pattern can be audited.
    """

    def __init__(self, D: Database, k: int, params: PrivacyParams, plan: FamilyPlan, *,
                 mistake_budget: int | None = None, noise: str = "laplace",
                 on_budget_exhausted: str = "raise", seed=None,
                 max_entries: int = DEFAULT_MAX_ENTRIES, keep_transcript: bool = True):
        if noise not in ("laplace", "off"):
            raise ValueError(f"unknown noise mode {noise!r}")
        if on_budget_exhausted not in ("raise", "guess"):
            raise ValueError(f"unknown budget policy {on_budget_exhausted!r}")
        self.d = D.d
        self.k = k
        self.params = params
        self.plan = plan
        self._ext = extend_with_complements(D)
        bound = mistake_bound(plan.W, plan.dimension, plan.degree, params.alpha)
        self.theoretical_bound = bound
        self.budget = int(mistake_budget) if mistake_budget is not None else bound
        self.state = IdcState.initial(plan.dimension, plan.degree, plan.W, params.alpha,
                                      bound=self.budget, max_entries=max_entries)
        self.noise = noise
        self.scales = (noise_scales(params.epsilon, params.delta, D.n, self.budget)
                       if noise == "laplace" else NoiseScales.off())
        self.threshold = 0.75 * params.alpha
        self.policy = on_budget_exhausted
        self.rng = np.random.default_rng(seed)
        self._noisy_threshold = self.threshold + laplace(self.rng, self.scales.threshold)
        self.answered = 0
        self.database_accesses = 0
        self.halted = False
        self.transcript = Transcript()
        self.keep_transcript = keep_transcript
        self._batches: dict[tuple[str, ...], _Batch] = {}

    # the only path to the data
    def _true_answer(self, y) -> float:
        self.database_accesses += 1
        return true_answer_disjunction(self._ext, y)

    @property
    def mistakes(self) -> int:
        return self.state.mistakes

    def _exhausted(self) -> bool:
        return self.state.mistakes >= self.budget

    def guess(self, query: Query) -> float:
        """Current polynomial's answer; uses no data."""
        y, flip = query_index(query, self.d, self.k)
        g = min(1.0, max(0.0, self.state.answer(encode_query(y.y, index=self.state.index))))
        return 1.0 - g if flip else g

    def answer(self, query: Query) -> tuple[float, str]:
        if self.answered >= self.params.queries:
            raise QueryBudgetExhausted(f"query budget of {self.params.queries} used up")
        y, flip = query_index(query, self.d, self.k)
        ybar = encode_query(y.y, index=self.state.index)
        guess = self.state.answer(ybar)
        # with noise on, the epoch accounting covers exactly `budget` epochs; stop reading data after that
        if self.noise == "laplace" and self._exhausted():
            if self.policy == "raise":
                raise MistakeBudgetExceeded(f"mistake budget B={self.budget} used up")
            self.halted = True
        if self.halted:
            value, mode = min(1.0, max(0.0, guess)), "guess"
        else:
            truth = self._true_answer(y)
            nu = laplace(self.rng, self.scales.query)
            if abs(truth - guess) + nu > self._noisy_threshold:
                if self._exhausted():
                    if self.policy == "raise":
                        raise MistakeBudgetExceeded(f"mistake budget B={self.budget} used up")
                    self.halted = True
                    value, mode = min(1.0, max(0.0, guess)), "guess"
                else:
                    value = min(1.0, max(0.0, truth + laplace(self.rng, self.scales.answer)))
                    self.state = mw_update(self.state, ybar, value)
                    self._noisy_threshold = self.threshold + laplace(self.rng, self.scales.threshold)
                    mode = "noisy"
            else:
                value, mode = min(1.0, max(0.0, guess)), "guess"
        return self._emit(query.id, value, flip, mode)

    def _emit(self, qid: str, value: float, flip: bool, mode: str) -> tuple[float, str]:
        self.answered += 1
        out = 1.0 - value if flip else value
        if self.keep_transcript:
            self.transcript.entries.append((qid, out, mode))
        return out, mode

    def _batch(self, queries: Sequence[Query]) -> "_Batch | None":
        key = tuple(q.id for q in queries)
        if key not in self._batches:
            if len(queries) * len(self.state.index) > BATCH_MAX_CELLS:
                return None
            idx = [query_index(q, self.d, self.k) for q in queries]
            ybars = np.array([encode_query(y.y, index=self.state.index) for y, _ in idx])
            truths = np.array([self._true_answer(y) for y, _ in idx])
            self._batches[key] = _Batch(ybars, truths, np.array([f for _, f in idx]))
        return self._batches[key]

    def answer_pass_noiseless(self, queries: Sequence[Query]) -> list[tuple[float, str]] | None:
        """One pass with noise off, batching the guesses between updates.

        Makes the same decisions as calling :meth:`answer` on each query in
        turn; truths are computed once per query list and cached. Returns None
        when the batch would be too large.
        """
        if self.noise != "off":
            raise ValueError("batched passes are only exact with noise off")
        if self.answered + len(queries) > self.params.queries:
            raise QueryBudgetExhausted(f"query budget of {self.params.queries} used up")
        batch = self._batch(queries)
        if batch is None:
            return None
        out: list[tuple[float, str]] = []
        start, n = 0, len(queries)
        while start < n:
            st = self.state
            guesses = st.W * (batch.ybars[start:] @ st.pbar)
            miss = np.flatnonzero(np.abs(batch.truths[start:] - guesses) > self.threshold)
            stop = n if miss.size == 0 else start + int(miss[0])
            for j in range(start, stop):
                g = min(1.0, max(0.0, guesses[j - start]))
                out.append(self._emit(queries[j].id, g, batch.flips[j], "guess"))
            if stop == n:
                break
            j = stop
            if self._exhausted():
                if self.policy == "raise":
                    raise MistakeBudgetExceeded(f"mistake budget B={self.budget} used up")
                self.halted = True
                rest = [self.answer(q) for q in queries[j:]]
                return out + rest
            value = min(1.0, max(0.0, batch.truths[j]))
            self.state = mw_update(st, batch.ybars[j], value)
            out.append(self._emit(queries[j].id, value, batch.flips[j], "noisy"))
            start = j + 1
        return out

    def size_check(self) -> SizeCheck:
        return check_database_size(self.params, self.plan.W, self.plan.dimension, self.plan.degree)

    def report(self) -> dict:
        size = self.size_check()
        s = self.scales
        p = self.params
        contract_risk = math.exp(-p.alpha / (2 * s.answer)) if s.answer > 0 else 0.0
        if s.threshold > 0:
            est = max(self.threshold + s.threshold * math.log(self.budget / p.beta)
                      + s.query * math.log(p.queries / p.beta),
                      s.answer * math.log(self.budget / p.beta))
        else:
            est = self.threshold
        return {
            "schema": REPORT_SCHEMA,
            "B": self.budget,
            "theoretical_B": self.theoretical_bound,
            "mistakes_used": self.state.mistakes,
            "queries_answered": self.answered,
            "database_accesses": self.database_accesses,
            "budget_exhausted": self.halted or self._exhausted(),
            "n": size.n,
            "required_n": size.required_n,
            "meets_required_n": size.ok,
            "noise": self.noise,
            "noise_scales": {"threshold": s.threshold, "query": s.query, "answer": s.answer},
            "threshold": self.threshold,
            "epoch_epsilon": s.epoch_epsilon,
            "threshold_constant": THRESHOLD_CONSTANT,
            "feedback_contract_violation_probability": contract_risk,
            "max_internal_error_estimate": est,
            "family": asdict(self.plan),
            "vector_length": self.plan.vector_length,
            "params": asdict(p),
        }


def build_mechanism(D: Database, k: int, *, epsilon: float, delta: float, alpha: float, beta: float,
                    queries: int | None = None, mistake_budget: int | None = None, noise: str = "laplace",
                    amplifier: str = "auto", block_count: int | None = None, weight_cap: float | None = None,
                    on_budget_exhausted: str = "raise", force: bool = False, seed=None,
                    max_entries: int = DEFAULT_MAX_ENTRIES) -> Mechanism:
    if queries is None:
        queries = count_marginals(D.d, k)
    params = PrivacyParams(epsilon, delta, alpha, beta, queries, D.n)
    plan = plan_family(D.d, k, alpha, amplifier=amplifier, block_count=block_count, weight_cap=weight_cap)
    mech = Mechanism(D, k, params, plan, mistake_budget=mistake_budget, noise=noise,
                     on_budget_exhausted=on_budget_exhausted, seed=seed, max_entries=max_entries)
    if noise == "laplace" and not force:
        size = mech.size_check()
        if not size.ok:
            raise InsufficientDataError(
                f"n={D.n} is below the required {size.required_n:.4g} for the accuracy guarantee; "
                "pass force=True to run without it"
            )
    return mech


def answer_online(mech: Mechanism, query: Query) -> tuple[float, str]:
    return mech.answer(query)


def run_pass(mech: Mechanism, queries: Sequence[Query]) -> tuple[dict[str, float], int]:
    """Answer every query once; returns the answers and the number of new mistakes."""
    before = mech.mistakes
    results = mech.answer_pass_noiseless(queries) if mech.noise == "off" and not mech.halted else None
    if results is None:
        results = [mech.answer(q) for q in queries]
    return {q.id: r[0] for q, r in zip(queries, results)}, mech.mistakes - before


def answer_offline_all(mech: Mechanism, passes: int = 1) -> dict[str, float]:
    """Stream every k-way marginal; keep the last pass, stop early after a clean pass."""
    queries = all_marginals(mech.d, mech.k)
    table: dict[str, float] = {}
    for _ in range(passes):
        table, new = run_pass(mech, queries)
        if new == 0 or mech.halted:
            break
    return table


@dataclass
class Summary:
    """Sparse polynomial over the 2d extended columns approximating the disjunction answers."""

    poly: SparsePoly
    d: int
    k: int
    W: float
    sample_count: int

    def __len__(self):
        return len(self.poly)


def sample_summary(pbar: np.ndarray, W: float, index, sample_count: int, rng: np.random.Generator,
                   d: int, k: int) -> Summary:
    """Draw sample_count slots i.i.d. from pbar; each contributes W * sign * chi_S / sample_count."""
    if sample_count < 1:
        raise ValueError("sample_count must be at least 1")
    counts = rng.multinomial(sample_count, pbar / pbar.sum())
    coefs = W * (counts[1::2] - counts[2::2]) / sample_count
    terms = {monomial(S): c for S, c in zip(index.monomials, coefs) if c != 0}
    return Summary(SparsePoly(index.d, terms), d, k, W, sample_count)


def release_summary(mech: Mechanism, sample_count: int, max_passes: int = 100) -> Summary:
    """Pass over every marginal until a pass has no updates or the mistake budget is spent, then sample."""
    queries = all_marginals(mech.d, mech.k)
    for _ in range(max_passes):
        _, new = run_pass(mech, queries)
        if new == 0 or mech.halted:
            st = mech.state
            return sample_summary(st.pbar, st.W, st.index, sample_count, mech.rng, mech.d, mech.k)
    raise NotConverged(f"no mistake-free pass within {max_passes} passes")


def evaluate_summary(s: Summary, query: Query) -> float:
    y, flip = query_index(query, s.d, s.k)
    v = s.poly.evaluate(y.y)
    return 1.0 - v if flip else v


class PrivateMarginalRelease(BaseEstimator):
    """Estimator front end: ``fit`` a 0/1 matrix, then ``predict`` query answers.

    ``predict`` is stateful: every call consumes query budget and may update the
    internal polynomial, because the mechanism is online.
    """

    def __init__(self, k: int = 2, epsilon: float = 1.0, delta: float = 1e-6, alpha: float = 0.05,
                 beta: float = 0.05, query_budget: int | None = None, mistake_budget: int | None = None,
                 noise: str = "laplace", amplifier: str = "auto", block_count: int | None = None,
                 weight_cap: float | None = None, on_budget_exhausted: str = "raise", force: bool = False,
                 random_state=None):
        self.k = k
        self.epsilon = epsilon
        self.delta = delta
        self.alpha = alpha
        self.beta = beta
        self.query_budget = query_budget
        self.mistake_budget = mistake_budget
        self.noise = noise
        self.amplifier = amplifier
        self.block_count = block_count
        self.weight_cap = weight_cap
        self.on_budget_exhausted = on_budget_exhausted
        self.force = force
        self.random_state = random_state

    def fit(self, X, y=None, columns: Sequence[str] | None = None):
        X = check_binary_array(X)
        D = Database(X, tuple(columns or ()))
        self.n_features_in_ = D.d
        self.mechanism_ = build_mechanism(
            D, self.k, epsilon=self.epsilon, delta=self.delta, alpha=self.alpha, beta=self.beta,
            queries=self.query_budget, mistake_budget=self.mistake_budget, noise=self.noise,
            amplifier=self.amplifier, block_count=self.block_count, weight_cap=self.weight_cap,
            on_budget_exhausted=self.on_budget_exhausted, force=self.force, seed=self.random_state,
        )
        self.plan_ = self.mechanism_.plan
        return self

    def predict(self, queries: Iterable[Query]) -> np.ndarray:
        check_is_fitted(self)
        return np.array([self.mechanism_.answer(q)[0] for q in queries])

    def answer_all(self, passes: int = 1) -> dict[str, float]:
        check_is_fitted(self)
        return answer_offline_all(self.mechanism_, passes)

    def summarize(self, sample_count: int, max_passes: int = 100) -> Summary:
        check_is_fitted(self)
        return release_summary(self.mechanism_, sample_count, max_passes)

    def report(self) -> dict:
        check_is_fitted(self)
        return self.mechanism_.report()
