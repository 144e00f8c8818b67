import math

import numpy as np
import pytest
from sklearn.base import clone

from privmarg.data import Database, Query, all_marginals, count_marginals, query_index, true_answer
from privmarg.mwidc import MistakeBudgetExceeded, encode_query, mistake_bound
from privmarg.privrelease import (
    THRESHOLD_CONSTANT,
    InsufficientDataError,
    Mechanism,
    NotConverged,
    PrivacyParams,
    PrivateMarginalRelease,
    QueryBudgetExhausted,
    answer_offline_all,
    answer_online,
    build_mechanism,
    check_database_size,
    composed_epsilon,
    evaluate_summary,
    laplace,
    noise_scales,
    plan_family,
    release_summary,
    required_database_size,
    run_pass,
    sample_summary,
)


def small_db(n=400, d=4, seed=0):
    rng = np.random.default_rng(seed)
    return Database((rng.random((n, d)) < np.linspace(0.2, 0.8, d)).astype(np.uint8))


def off_mechanism(D, k=2, queries=10 ** 7, **kw):
    params = PrivacyParams(1.0, 1e-6, 0.1, 0.05, queries, D.n)
    return Mechanism(D, k, params, plan_family(D.d, k, 0.1), noise="off", **kw)


def test_params_validation():
    with pytest.raises(ValueError):
        PrivacyParams(0, 1e-6, 0.1, 0.1, 10, 10)
    with pytest.raises(ValueError):
        PrivacyParams(1, 1.0, 0.1, 0.1, 10, 10)
    with pytest.raises(ValueError):
        PrivacyParams(1, 1e-6, 0.1, 0.1, 0, 10)


def test_required_size_golden():
    # W=1, l=e, beta=delta=1/e, alpha=eps=1, d=t=1: 128 ln(e^2) ln(4e) sqrt(ln 5)
    v = required_database_size(1, 1, 1, alpha=1, beta=1 / math.e, epsilon=1, delta=1 / math.e, queries=math.e)
    assert v == pytest.approx(774.9989142115893, rel=1e-12)


def test_required_size_scaling():
    kw = dict(alpha=0.1, beta=0.05, delta=1e-6, queries=1000)
    assert required_database_size(3, 10, 2, epsilon=2, **kw) == pytest.approx(
        required_database_size(3, 10, 2, epsilon=1, **kw) / 2)
    ws = [required_database_size(W, 10, 2, epsilon=1, **kw) for W in (1, 2, 5, 10)]
    assert ws == sorted(ws)
    p = PrivacyParams(1, 1e-6, 0.1, 0.05, 1000, 10 ** 12)
    assert check_database_size(p, 3, 10, 2).ok


def test_noise_scales():
    s = noise_scales(1.0, 1e-6, 50_000, 200)
    b = THRESHOLD_CONSTANT * math.sqrt(1600) * math.log(4e6) / 50_000
    assert s.threshold == pytest.approx(b)
    assert s.query == pytest.approx(2 * b) and s.answer == pytest.approx(2 * b)
    assert s.epoch_epsilon * 50_000 * s.threshold == pytest.approx(THRESHOLD_CONSTANT)
    # the epochs compose to at most eps at slack delta
    assert composed_epsilon(s.epoch_epsilon, 200, 1e-6) <= 1.0
    with pytest.raises(ValueError):
        noise_scales(1, 1e-6, 10, 0)


@pytest.mark.parametrize("eps,B", [(0.1, 10), (1.0, 1000), (5.0, 10 ** 5)])
def test_composition_within_budget(eps, B):
    s = noise_scales(eps, 1e-6, 1000, B)
    assert composed_epsilon(s.epoch_epsilon, B, 1e-6) <= eps


def test_laplace_moments():
    rng = np.random.default_rng(7)
    x = laplace(rng, 0.3, 10 ** 6)
    assert abs(x.mean()) < 0.02 * 0.3
    assert x.var() == pytest.approx(2 * 0.09, rel=0.02)
    assert laplace(rng, 0.0) == 0.0


def test_plan_family():
    plan = plan_family(4, 2, 0.1)
    assert plan.dimension == 8 and plan.gamma == 0.05
    assert plan.W == pytest.approx((1 + plan.or_weight) / 2)
    assert plan.vector_length == 2 * sum(math.comb(8, j) for j in range(plan.degree + 1)) + 1


def test_noise_off_converges_within_alpha():
    D = small_db(d=3)
    mech = off_mechanism(D)
    qs = all_marginals(3, 2)
    for _ in range(5000):
        table, new = run_pass(mech, qs)
        if new == 0:
            break
    assert new == 0
    assert all(abs(table[q.id] - true_answer(D, q)) <= 0.1 for q in qs)
    assert mech.mistakes <= mech.theoretical_bound


def test_batched_pass_matches_sequential():
    D = small_db()
    a, b = off_mechanism(D), off_mechanism(D)
    qs = all_marginals(4, 2)
    for _ in range(3):
        ta, _ = run_pass(a, qs)
        tb = {q.id: b.answer(q)[0] for q in qs}
        assert a.mistakes == b.mistakes
        assert max(abs(ta[k] - tb[k]) for k in ta) <= 1e-12
    assert [(i, m) for i, _, m in a.transcript.entries] == [(i, m) for i, _, m in b.transcript.entries]
    assert a.database_accesses < b.database_accesses


def test_answers_clamped_and_modes():
    D = small_db()
    mech = build_mechanism(D, 2, epsilon=1, delta=1e-6, alpha=0.1, beta=0.05, mistake_budget=20,
                           on_budget_exhausted="guess", force=True, seed=3)
    for q in all_marginals(4, 2):
        v, mode = answer_online(mech, q)
        assert 0.0 <= v <= 1.0 and mode in ("guess", "noisy")
    assert mech.mistakes <= 20


def test_deterministic_transcript():
    D = small_db()
    runs = []
    for _ in range(2):
        mech = build_mechanism(D, 2, epsilon=1, delta=1e-6, alpha=0.1, beta=0.05, mistake_budget=50,
                               queries=10 ** 4, on_budget_exhausted="guess", force=True, seed=11)
        answer_offline_all(mech, passes=2)
        runs.append(mech.transcript.entries)
    assert runs[0] == runs[1]


def test_offline_equals_online_stream():
    D = small_db()
    kw = dict(epsilon=1, delta=1e-6, alpha=0.1, beta=0.05, mistake_budget=50, force=True, seed=5,
              on_budget_exhausted="guess")
    a, b = build_mechanism(D, 2, **kw), build_mechanism(D, 2, **kw)
    table = answer_offline_all(a)
    online = {q.id: answer_online(b, q)[0] for q in all_marginals(4, 2)}
    assert table == online and len(table) == count_marginals(4, 2)


def test_budget_policies():
    D = small_db()
    kw = dict(epsilon=1, delta=1e-6, alpha=0.1, beta=0.05, mistake_budget=3, queries=10 ** 4, force=True, seed=0)
    mech = build_mechanism(D, 2, **kw)
    with pytest.raises(MistakeBudgetExceeded):
        answer_offline_all(mech, passes=5)
    mech = build_mechanism(D, 2, on_budget_exhausted="guess", **kw)
    answer_offline_all(mech, passes=5)
    assert mech.halted and mech.mistakes == 3
    accesses = mech.database_accesses
    answer_online(mech, all_marginals(4, 2)[5])
    assert mech.database_accesses == accesses  # no data access after halting


def test_query_budget():
    mech = off_mechanism(small_db(), queries=2)
    qs = all_marginals(4, 1)
    answer_online(mech, qs[0])
    answer_online(mech, qs[1])
    with pytest.raises(QueryBudgetExhausted):
        answer_online(mech, qs[2])
    with pytest.raises(QueryBudgetExhausted):
        run_pass(off_mechanism(small_db(), queries=2), qs)


def test_access_only_through_true_answer():
    D = small_db()
    mech = build_mechanism(D, 2, epsilon=1, delta=1e-6, alpha=0.1, beta=0.05, mistake_budget=40,
                           on_budget_exhausted="guess", force=True, seed=1)
    qs = all_marginals(4, 2)
    before = mech.database_accesses
    for q in qs:
        mech.guess(q)
    assert mech.database_accesses == before
    answer_offline_all(mech)
    assert mech.database_accesses <= len(qs)


def test_refuses_small_database():
    with pytest.raises(InsufficientDataError):
        build_mechanism(small_db(), 2, epsilon=1, delta=1e-6, alpha=0.1, beta=0.05)


def test_report_fields():
    mech = build_mechanism(small_db(), 2, epsilon=1, delta=1e-6, alpha=0.1, beta=0.05, force=True)
    r = mech.report()
    for key in ("B", "mistakes_used", "required_n", "n", "noise_scales", "max_internal_error_estimate",
                "meets_required_n", "schema"):
        assert key in r
    assert r["B"] == mistake_bound(mech.plan.W, 8, mech.plan.degree, 0.1)
    assert r["meets_required_n"] is False


def test_summary_unbiased_small():
    D = small_db(d=3)
    mech = off_mechanism(D)
    s = release_summary(mech, 200, max_passes=5000)
    assert len(s) <= 200
    rng = np.random.default_rng(0)
    st = mech.state
    q = all_marginals(3, 2)[7]
    y, flip = query_index(q, 3, 2)
    exact = st.answer(encode_query(y.y, index=st.index))
    exact = 1 - exact if flip else exact
    draws = [evaluate_summary(sample_summary(st.pbar, st.W, st.index, 50, rng, 3, 2), q) for _ in range(3000)]
    se = np.std(draws) / math.sqrt(len(draws))
    assert abs(np.mean(draws) - exact) <= 4 * se


def test_summary_not_converged():
    with pytest.raises(NotConverged):
        release_summary(off_mechanism(small_db(d=6)), 10, max_passes=1)


def test_estimator_api():
    X = small_db().bits
    est = PrivateMarginalRelease(k=2, alpha=0.1, noise="off", random_state=0)
    assert clone(est).get_params()["alpha"] == 0.1
    est.set_params(query_budget=10 ** 6)
    est.fit(X)
    assert est.n_features_in_ == 4
    q = Query("x", "marginal", (0,), (1,))
    pred = est.predict([q])
    assert pred.shape == (1,) and 0 <= pred[0] <= 1
    assert set(est.answer_all()) == {q.id for q in all_marginals(4, 2)}
    assert est.report()["noise"] == "off"
    with pytest.raises(ValueError):
        PrivateMarginalRelease().fit([[0, 3]])
    from sklearn.exceptions import NotFittedError
    with pytest.raises(NotFittedError):
        PrivateMarginalRelease().predict([q])
