import itertools
import math
from fractions import Fraction

import numpy as np
import pytest
from scipy.optimize import linprog

from privmarg.dualcert import (
    CombinedWitness,
    EnumerationBudgetExceeded,
    InnerWitness,
    OuterInfeasible,
    OuterWitness,
    WitnessError,
    build_inner_witness,
    certify_lower_bound,
    check_outer_witness,
    combine,
    lower_bound_certificate,
    max_outer_degree,
    minimum_weight,
    primal_feasibility,
    set_threads,
    solve_outer_witness,
    theoretical_cutoff,
    verify_inner_witness,
)
from privmarg.polyrep import or_value


def test_inner_witness_d2():
    mu = build_inner_witness(2)
    assert mu.weights == (Fraction(1, 2), Fraction(1, 4), Fraction(1, 4))
    assert mu.points.tolist() == [[1, 1], [-1, 1], [1, -1]]
    assert sum(w * f for w, f in zip(mu.weights, or_value(mu.points))) == 0


@pytest.mark.parametrize("d", range(2, 9))
def test_inner_certifies_d_over_t(d):
    mu = build_inner_witness(d)
    assert verify_inner_witness(mu, 1) == d
    ws = [verify_inner_witness(mu, t) for t in range(1, d + 1)]
    assert all(a >= b for a, b in zip(ws, ws[1:]))
    assert math.isfinite(ws[-1])


def test_inner_rejects_unbalanced():
    mu = build_inner_witness(3)
    bad = InnerWitness(3, mu.points, (Fraction(1, 4),) + (Fraction(1, 4),) * 3)
    with pytest.raises(WitnessError):
        verify_inner_witness(bad, 1)
    with pytest.raises(WitnessError):
        verify_inner_witness(InnerWitness(3, mu.points, (Fraction(1),) * 4), 1)


def test_outer_k1():
    w = solve_outer_witness(1, 0.25, 1)
    # OR_1(y) = y here, so the witness puts +1/2 on y = 1 and -1/2 on y = -1
    assert np.allclose(w.values, [0.5, -0.5])
    assert w.correlation == pytest.approx(1.0)


def test_outer_degree_scan():
    assert max_outer_degree(3, 1 / 6) == 2
    with pytest.raises(OuterInfeasible):
        solve_outer_witness(3, 1 / 6, 3)
    # best correlations per degree, frozen from the LP and checked against scipy below
    assert solve_outer_witness(3, 1 / 6, 2).correlation == pytest.approx(2 / 3)


@pytest.mark.parametrize("k,D", [(2, 1), (3, 2), (4, 2), (5, 3)])
def test_outer_matches_scipy(k, D):
    w = solve_outer_witness(k, 0.0, D)
    check_outer_witness(w)
    Y = w.points.astype(float)
    F = or_value(Y)
    rows = [np.ones(2 ** k)]
    for j in range(1, D):
        for T in itertools.combinations(range(k), j):
            rows.append(np.prod(Y[:, list(T)], axis=1))
    M = np.array(rows)
    A_eq = np.vstack([np.hstack([M, -M]), np.ones(2 ** (k + 1))])
    b_eq = np.append(np.zeros(len(M)), 1.0)
    ref = linprog(-np.concatenate([F, -F]), A_eq=A_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    assert w.correlation == pytest.approx(-ref.fun, abs=1e-8)


def test_outer_checker_catches_bad_witness():
    for vals in ([0.25, -0.25], [0.6, -0.6], [0.5, 0.5]):
        with pytest.raises(WitnessError):
            check_outer_witness(OuterWitness(1, 0.25, 1, np.array(vals)))


def test_combined_witness_properties():
    outer = solve_outer_witness(3, 1 / 6, 2)
    psi = combine(outer, build_inner_witness(3))
    assert len(psi) == 4 ** 3
    assert psi.l1 == pytest.approx(1.0)
    assert psi.correlation() == pytest.approx(outer.correlation) and psi.correlation() > 2 / 6
    assert psi.in_ball()
    with pytest.raises(ValueError):
        combine(outer, build_inner_witness(3), k=2)


def test_certificate_d9():
    rep = lower_bound_certificate(9, 3, 1 / 6)
    assert rep["passed"] and rep["certified_degree_lower_bound"] == 2
    assert rep["W_cutoff"] == pytest.approx(theoretical_cutoff(1 / 6, 3, 3, 2)) == pytest.approx(1 / 16)
    assert rep["primal"] == "not-exists"
    assert rep["support"] == 64


def test_certificate_degree_one_is_orthogonal():
    # Gamma kills degree <= 1 and the inner mean is affine, so Psi is orthogonal to all chi_S, |S| <= 1
    psi = combine(solve_outer_witness(3, 1 / 6, 2), build_inner_witness(3))
    rep = certify_lower_bound(psi, 1 / 6, 1e6, 1)
    assert rep.max_character <= 1e-12 and rep.passed and rep.flip_W == math.inf


def test_certificate_flip_at_degree_two():
    psi = combine(solve_outer_witness(3, 1 / 6, 2), build_inner_witness(3))
    rep = certify_lower_bound(psi, 1 / 6, 1.0, 2)
    # max |sum Psi chi_S| = 2/27 at a cross-block pair, so W* = (2/3 - 1/6) / (2/27) = 27/4
    assert rep.max_character == pytest.approx(2 / 27)
    assert rep.flip_W == pytest.approx(6.75)
    assert certify_lower_bound(psi, 1 / 6, 6.74, 2).passed
    assert not certify_lower_bound(psi, 1 / 6, 6.76, 2).passed
    assert minimum_weight(9, 3, 1 / 6, 2) == math.inf


def test_certificate_normalisation():
    psi = combine(solve_outer_witness(3, 1 / 6, 2), build_inner_witness(3))
    half = CombinedWitness(psi.dimension, psi.k, psi.points, psi.values * 0.5)
    rep = certify_lower_bound(half, 0.01, 0.01, 1)
    assert not rep.normalised and not rep.passed


def test_certificate_budget_and_threads():
    psi = combine(solve_outer_witness(3, 1 / 6, 2), build_inner_witness(3))
    with pytest.raises(EnumerationBudgetExceeded):
        certify_lower_bound(psi, 1 / 6, 1.0, 3, budget=100)
    single = certify_lower_bound(psi, 1 / 6, 1.0, 3)
    set_threads(3)
    try:
        multi = certify_lower_bound(psi, 1 / 6, 1.0, 3)
    finally:
        set_threads(1)
    assert single.as_dict() == multi.as_dict()


def test_primal_golden_values():
    assert primal_feasibility(4, 4, 1 / 400, 3, 4).exists
    assert not primal_feasibility(6, 1, 1 / 6, 6, 1).exists
    # symmetric solution c0 + c1 sum y_i: c1 = 5/6, c0 = -25/6
    assert minimum_weight(6, 1, 1 / 6, 1) == pytest.approx(55 / 6, abs=1e-7)
    assert primal_feasibility(6, 1, 1 / 6, 55 / 6 + 1e-6, 1).exists
    with pytest.raises(EnumerationBudgetExceeded):
        primal_feasibility(20, 3, 1 / 6, 1, 2)


def test_minimum_weight_matches_scipy():
    from privmarg.dualcert import _primal_system
    A, b, n_mon = _primal_system(5, 2, 1 / 6, 2)
    ref = linprog(np.ones(2 * n_mon), A_ub=A, b_ub=b, bounds=(0, None), method="highs")
    assert minimum_weight(5, 2, 1 / 6, 2) == pytest.approx(ref.fun, abs=1e-7)


def test_weak_duality_scan():
    psi = combine(solve_outer_witness(2, 1 / 6, 2), build_inner_witness(3))
    for W in (0.5, 2.0, 10.0):
        rep = certify_lower_bound(psi, 1 / 6, W, 1)
        if rep.passed:
            assert not primal_feasibility(6, 2, 1 / 6, W, 1).exists
