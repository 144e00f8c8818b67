import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from privmarg.approx import (
    ApproxSpec,
    HammingBall,
    ball_size,
    build_global_approx,
    build_restricted_approx,
    choose_block_count,
    default_weight_cap,
    evaluate_approx,
    expand,
    partition,
    query_function,
    restrict_to_record,
    scan_block_counts,
    verify_on_ball,
)
from privmarg.polyrep import ExpansionBudgetExceeded, SparsePoly, exact_or, or_value

from conftest import cube


def test_partition_shapes():
    assert partition(6, 3) == ((0, 1), (2, 3), (4, 5))
    assert partition(7, 3) == ((0, 1, 2), (3, 4, 5), (6,))
    # ceil(5/4) = 2 leaves the last block empty
    assert partition(5, 4) == ((0, 1), (2, 3), (4,), ())


@given(st.integers(1, 30), st.data())
def test_partition_covers_once(d, data):
    m = data.draw(st.integers(1, d))
    blocks = partition(d, m)
    assert len(blocks) == m
    assert sorted(i for b in blocks for i in b) == list(range(d))


def test_spec_validation():
    with pytest.raises(ValueError):
        build_restricted_approx(10, 4, 3, 0.1)
    with pytest.raises(ValueError):
        build_global_approx(5, 6, 0.1)
    spec = build_restricted_approx(6, 2, 3, 0.1)
    with pytest.raises(ValueError):
        ApproxSpec(6, 2, ((0, 1), (1, 2)), spec.amplifier, "x", "restricted", 0.1)


def test_hamming_ball():
    H = HammingBall(5, 2)
    M = H.matrix()
    assert len(H) == M.shape[0] == 1 + 5 + 10 == ball_size(5, 2)
    assert ((M == -1).sum(axis=1) <= 2).all()
    assert len({tuple(r) for r in M}) == len(H)
    assert np.array_equal(np.array(list(H)), M)


def test_ball_size_known():
    assert ball_size(24, 3) == 2325
    assert ball_size(4, 9) == 16


@pytest.mark.parametrize("amp", ["chebyshev", "interpolation"])
@given(st.data())
def test_restricted_error_bound(amp, data):
    d = data.draw(st.integers(2, 12))
    k = data.draw(st.integers(1, min(d, 4)))
    m = data.draw(st.integers(k, d))
    gamma = data.draw(st.sampled_from([1 / 6, 1 / 100, 1 / 400]))
    spec = build_restricted_approx(d, k, m, gamma, amp)
    rep = verify_on_ball(spec, k, gamma)
    assert rep.passed
    if amp == "interpolation":
        assert rep.max_error <= 1e-9


@given(st.integers(1, 10), st.data())
def test_global_error_bound(d, data):
    m = data.draw(st.integers(1, d))
    spec = build_global_approx(d, m, 0.05)
    Y = cube(d)
    assert np.abs(evaluate_approx(spec, Y) - or_value(Y)).max() <= 0.05


def test_expansion_matches_evaluation_and_bounds():
    for amp in ("interpolation", "chebyshev"):
        spec = build_restricted_approx(8, 2, 4, 0.05, amp)
        p = expand(spec)
        Y = cube(8)
        assert np.abs(p.evaluate_many(Y) - evaluate_approx(spec, Y)).max() <= 1e-9
        assert p.degree() <= spec.degree_bound
        assert p.weight() <= spec.weight_bound * (1 + 1e-12)


def test_single_block_reduces_to_amplified_or():
    # m = 1: G = 1 - 2 q(1 - p_d), and 1 - p_d is 0 or 2
    spec = build_global_approx(4, 1, 0.1)
    Y = cube(4)
    direct = 1 - 2 * spec.amplifier(1 - exact_or(4).evaluate_many(Y))
    assert np.allclose(evaluate_approx(spec, Y), direct)


def test_expansion_budget():
    spec = build_restricted_approx(12, 3, 4, 1 / 400, "chebyshev")
    with pytest.raises(ExpansionBudgetExceeded):
        expand(spec, max_terms=100)


def test_restrict_to_record_poly_and_spec_agree():
    spec = build_restricted_approx(8, 2, 4, 0.05)
    p = expand(spec)
    x = np.array([1, 0, 1, 1, 0, 0, 1, 0])
    pr = restrict_to_record(p, x)
    sr = restrict_to_record(spec, x)
    assert sr.block_size == spec.block_size
    for y in HammingBall(8, 2):
        assert pr(y) == pytest.approx(evaluate_approx(sr, y), abs=1e-9)
    # restricted variables are gone and weight does not grow
    assert all(all(x[i] == 1 for i in range(8) if (m >> i) & 1) for m, _ in pr.items())
    assert pr.weight() <= p.weight() + 1e-9


def test_restricted_poly_is_the_record_disjunction():
    spec = build_restricted_approx(6, 2, 3, 0.05, "interpolation")
    p = expand(spec)
    x = np.array([0, 1, 0, 0, 1, 1])
    f = query_function(restrict_to_record(p, x))
    for y in HammingBall(6, 2):
        truth = float(np.any((x == 1) & (y == -1)))
        assert f(y) == pytest.approx(truth, abs=1e-9)


def test_restrict_bad_record():
    with pytest.raises(ValueError):
        restrict_to_record(exact_or(3), np.array([0, 2, 1]))
    with pytest.raises(TypeError):
        restrict_to_record("p", np.array([0, 1]))


def test_block_scan_monotone():
    scan = scan_block_counts(16, 2, 0.05, expansion_budget=0)
    degrees = [c.degree for c in scan]
    weights = [c.weight for c in scan]
    assert degrees == sorted(degrees, reverse=True)
    assert weights == sorted(weights)


def test_choose_block_count():
    c = choose_block_count(24, 3, 1 / 400, weight_cap=1e3, expansion_budget=0)
    assert (c.m, c.degree) == (6, 12)
    assert c.weight == pytest.approx(769.984375)
    assert c.weight <= 1e3
    with pytest.raises(ValueError):
        choose_block_count(24, 3, 1 / 400, weight_cap=1.0, expansion_budget=0)


def test_default_cap():
    assert default_weight_cap(1) == 1000.0
    assert default_weight_cap(100) == pytest.approx(1000 * 100 ** 0.01)


def test_realized_weight_in_report():
    spec = build_restricted_approx(12, 2, 4, 0.05, "interpolation")
    rep = verify_on_ball(spec, 2, 0.05, expand_poly=True)
    # frozen from the expansion: 323 terms
    assert rep.realized_degree == 6
    assert rep.realized_weight == pytest.approx(23.75)
    assert len(expand(spec)) == 323
    with pytest.raises(ValueError):
        verify_on_ball(spec, 2, enumeration_budget=10)


def _walsh_coefficients(values, d):
    # c_S = 2^-d sum_y f(y) chi_S(y), via the fast Walsh-Hadamard transform
    a = np.array(values, dtype=float)
    h = 1
    while h < len(a):
        a = a.reshape(-1, 2, h)
        a = np.stack([a[:, 0] + a[:, 1], a[:, 0] - a[:, 1]], axis=1).reshape(-1)
        h *= 2
    return a / 2 ** d


@pytest.mark.parametrize("amp", ["interpolation", "chebyshev"])
def test_expansion_matches_walsh_transform(amp):
    d = 10
    spec = build_restricted_approx(d, 2, 5, 0.05, amp)
    # row r of the table has y_i = -1 when bit i of r is set, so index r is the monomial mask
    r = np.arange(2 ** d)[:, None]
    Y = np.where((r >> np.arange(d)) & 1, -1, 1)
    coefs = _walsh_coefficients(evaluate_approx(spec, Y), d)
    p = expand(spec)
    dense = np.zeros(2 ** d)
    for m, c in p.items():
        dense[m] = c
    assert np.abs(dense - coefs).max() <= 1e-9
