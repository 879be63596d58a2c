from __future__ import annotations

from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import dense_schedule, profits_by_definition, rel_err

from impact_kit.distributions import (
    make_geometric,
    make_pareto,
    make_stretched_exponential,
    make_tabulated,
    make_truncated_pareto,
)
from impact_kit.errors import DomainError, IdentityViolation, ScheduleError
from impact_kit.impact import (
    CSV_HEADER,
    corrupt_rtilde,
    fair_pricing_residuals,
    martingale_residuals,
    partial_profit,
    pareto_asymptotics,
    profit_report,
    solve_schedule,
    solve_schedule_recursive,
    stretched_asymptotics,
    truncated_pareto_rtilde,
    with_profit,
)

positive_weights = st.lists(st.floats(0.01, 10.0), min_size=3, max_size=60)


def test_worked_example():
    s = solve_schedule(make_tabulated([1, 1, 1]))
    np.testing.assert_allclose(s.rtilde[:2], [1.0, 0.5], rtol=1e-15)
    assert np.isnan(s.rtilde[2])
    np.testing.assert_allclose(s.rrev, [2.0, 0.5, 0.0], rtol=1e-15)
    np.testing.assert_allclose(s.immediate, [1.0, 2.0, 2.5], rtol=1e-15)
    np.testing.assert_allclose(s.permanent, [-1.0, 1.5, 2.5], rtol=1e-15)
    i, j = dense_schedule([1, 1, 1])
    np.testing.assert_allclose(s.immediate, i, rtol=1e-14)
    np.testing.assert_allclose(s.permanent, j, rtol=1e-14, atol=1e-14)


def test_worked_example_exact_rationals():
    # hand recursion in exact arithmetic
    p = [Fraction(1, 3)] * 3
    S = [sum(p[k:]) for k in range(3)] + [Fraction(0)]
    rt = [Fraction(1)]
    rt.append(Fraction(1, 2) * (p[1] / S[2]) * (S[1] / S[1]) * rt[0])
    R = [S[t + 1] / p[t] * rt[t] for t in range(2)] + [Fraction(0)]
    imm = [Fraction(1), 1 + rt[0], 1 + rt[0] + rt[1]]
    perm = [imm[k] - R[k] for k in range(3)]
    pi = [sum(imm[: k + 1]) / (k + 1) - perm[k] for k in range(3)]
    assert pi == [2, 0, Fraction(-2, 3)]
    s = solve_schedule(make_tabulated([1, 1, 1]))
    np.testing.assert_allclose(s.pi, [float(x) for x in pi], atol=1e-14)


def test_recursion_matches_closed_form_on_worked_example():
    d = make_tabulated([1, 1, 1])
    a, b = solve_schedule(d), solve_schedule_recursive(d)
    np.testing.assert_allclose(a.immediate, b.immediate, rtol=1e-14)
    np.testing.assert_allclose(a.permanent, b.permanent, rtol=1e-14)


def test_recursion_matches_closed_form_pareto_long_horizon():
    d = make_pareto(1.5)
    a = solve_schedule(d, horizon=5000)
    b = solve_schedule_recursive(d, horizon=5000)
    assert rel_err(b.rtilde, a.rtilde) < 1e-10
    assert rel_err(b.immediate, a.immediate) < 1e-10


def test_horizon_two_only_uses_rtilde1():
    d = make_pareto(2.0)
    a = solve_schedule(d, horizon=2)
    b = solve_schedule_recursive(d, horizon=2)
    np.testing.assert_allclose(a.immediate, [1.0, 2.0])
    np.testing.assert_allclose(a.immediate, b.immediate)


def test_geometric_schedule():
    d = make_geometric(0.6)
    s = solve_schedule(d, horizon=60)
    t = np.arange(2, 61)
    # p_t/S(t+1) = (1-q)/q and S(2)/S(t) = q^(2-t)
    np.testing.assert_allclose(s.rtilde[1:], (1 / t) * (0.4 / 0.6) * 0.6 ** (2.0 - t), rtol=1e-12)
    assert rel_err(solve_schedule_recursive(d, horizon=60).rtilde, s.rtilde) < 1e-12
    assert np.max(np.abs(martingale_residuals(s))) < 1e-12 * s.scale()
    assert np.max(np.abs(fair_pricing_residuals(s))) < 1e-12 * s.scale()


def test_flat_impact_with_zero_scale():
    s = solve_schedule(make_tabulated([3, 1, 2, 5]), R0=1.7, Rtilde1=0.0)
    np.testing.assert_allclose(s.immediate, 1.7)
    np.testing.assert_allclose(s.permanent, 1.7)


def test_zero_interior_mass_is_an_error():
    with pytest.raises(ScheduleError) as exc:
        solve_schedule(make_tabulated([1, 0, 1]))
    assert exc.value.t == 2


def test_scale_validation():
    with pytest.raises(DomainError):
        solve_schedule(make_tabulated([1, 1]), R0=0.0)
    with pytest.raises(DomainError):
        solve_schedule(make_tabulated([1, 1]), Rtilde1=-1.0)
    with pytest.raises(DomainError):
        solve_schedule(make_pareto(1.5))
    with pytest.raises(DomainError):
        solve_schedule(make_tabulated([1, 1]), horizon=3)


@given(positive_weights)
def test_closed_form_recursion_and_dense_solve_agree(w):
    d = make_tabulated(w)
    a = solve_schedule(d, R0=0.8, Rtilde1=1.3)
    b = solve_schedule_recursive(d, R0=0.8, Rtilde1=1.3)
    i, j = dense_schedule(w, R0=0.8, Rtilde1=1.3)
    assert rel_err(a.immediate, b.immediate) < 1e-10
    assert rel_err(a.immediate, i) < 1e-10
    assert rel_err(a.permanent, j) < 1e-10


@given(positive_weights)
def test_identities_hold(w):
    d = make_tabulated(w)
    s = solve_schedule(d)
    scale = s.scale()
    assert np.max(np.abs(martingale_residuals(s))) < 1e-12 * scale
    assert np.max(np.abs(fair_pricing_residuals(s))) < 1e-12 * scale
    np.testing.assert_allclose(s.immediate[1:], s.immediate[:-1] + s.rtilde[:-1], rtol=1e-14)
    np.testing.assert_allclose(s.permanent, s.immediate - s.rrev, rtol=1e-14, atol=1e-14 * scale)
    assert s.rrev[-1] == 0.0


@given(positive_weights, st.floats(0.1, 5.0), st.floats(0.1, 5.0))
def test_scale_linearity(w, r0, k):
    d = make_tabulated(w)
    a = solve_schedule(d, R0=r0, Rtilde1=1.0)
    b = solve_schedule(d, R0=r0, Rtilde1=k)
    np.testing.assert_allclose(b.rtilde[:-1], k * a.rtilde[:-1], rtol=1e-13)
    np.testing.assert_allclose(b.rrev, k * a.rrev, rtol=1e-13)
    np.testing.assert_allclose(b.immediate - r0, k * (a.immediate - r0), rtol=1e-12, atol=1e-13)


@given(positive_weights)
def test_profit_report(w):
    d = make_tabulated(w)
    s = solve_schedule(d)
    rep = profit_report(s, d)
    scale = s.scale()
    M = d.support_max
    np.testing.assert_allclose(rep.pi, profits_by_definition(s.immediate, s.permanent), atol=1e-13 * scale)
    np.testing.assert_allclose(rep.pi, rep.pi_rewrite, atol=1e-12 * scale)
    assert abs(rep.overall) < 1e-10 * scale
    assert rep.pi[0] > 0 and rep.pi[-1] < 0
    assert abs(d.pmf(1) * rep.pi[0] + M * d.pmf(M) * rep.pi[-1]) < 1e-12 * scale


def test_profit_report_worked_example():
    d = make_tabulated([1, 1, 1])
    rep = profit_report(solve_schedule(d), d)
    np.testing.assert_allclose(rep.pi, [2.0, 0.0, -2 / 3], atol=1e-14)
    assert abs(rep.overall) < 1e-14
    assert partial_profit(rep, solve_schedule(d), d, 1) == pytest.approx(2 / 3, rel=1e-14)
    assert partial_profit(rep, solve_schedule(d), d, 2) == pytest.approx(-3 * (1 / 3) * (-2 / 3), rel=1e-14)
    with pytest.raises(DomainError):
        partial_profit(rep, solve_schedule(d), d, 3)


def test_partial_profit_geometric_brute_force():
    d = make_tabulated(make_geometric(0.5).pmf(np.arange(1, 51)))
    s = solve_schedule(d)
    rep = profit_report(s, d)
    for nbar in range(1, 50):
        n = np.arange(1, nbar + 1)
        lhs = sum(d.pmf(k) * k * rep.pi[k - 1] for k in n)
        rhs = d.survival(nbar + 1) * sum(k * s.rtilde[k - 1] for k in n)
        assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-12 * s.scale() * d.survival(nbar + 1))
        assert partial_profit(rep, s, d, nbar) >= -1e-12 * s.scale()


def test_partial_profit_unbounded():
    d = make_pareto(1.5)
    s = solve_schedule(d, horizon=200)
    for nbar in (1, 10, 150):
        assert partial_profit(None, s, d, nbar) > 0


def test_partial_profit_detects_broken_schedule():
    d = make_tabulated([1, 2, 3, 4])
    s = with_profit(solve_schedule(d), 2, -0.5)
    with pytest.raises(IdentityViolation):
        partial_profit(None, s, d, 2)


def test_corruption_breaks_martingale_only_at_t():
    s = corrupt_rtilde(solve_schedule(make_tabulated([1, 2, 3, 4, 5])), 2, 2.0)
    res = martingale_residuals(s)
    assert abs(res[1]) > 0.05
    assert np.all(np.abs(np.delete(res, 1)) < 1e-12)


def test_pareto_asymptotics_examples():
    assert pareto_asymptotics(1.5, 100).permanent_over_immediate == pytest.approx(2 / 3)
    assert pareto_asymptotics(2.0, 100).immediate_scaling == pytest.approx(100.0)
    assert pareto_asymptotics(1.0, 100).immediate_scaling == pytest.approx(np.log(101))
    with pytest.raises(DomainError):
        pareto_asymptotics(0.0, 3)


@pytest.mark.parametrize("beta", [0.8, 1.5, 2.5])
def test_pareto_rtilde_closed_form(beta):
    s = solve_schedule(make_pareto(beta), horizon=300)
    exact = np.array([pareto_asymptotics(beta, t).rtilde_exact for t in range(1, 300)])
    assert rel_err(s.rtilde[:-1], exact) < 1e-10


def test_stretched_asymptotics_examples():
    assert stretched_asymptotics(1.0, 10).ratio == pytest.approx(0.1)
    assert stretched_asymptotics(0.7, 100).ratio == pytest.approx(1 / (0.7 * 100**0.7))
    with pytest.raises(DomainError):
        stretched_asymptotics(0.7, 1)


def test_stretched_asymptotics_log_space():
    a = stretched_asymptotics(0.5, 10**6)
    assert np.isinf(a.immediate) and np.isfinite(a.log_immediate)
    # permanent/immediate from the integral tends to the leading-order ratio
    b = stretched_asymptotics(0.5, 10**5)
    approx = np.exp(b.log_permanent - b.log_immediate)
    assert approx / b.ratio == pytest.approx(1.0, rel=0.02)


def test_truncated_pareto_closed_form():
    d = make_truncated_pareto(1.5, 1000)
    s = solve_schedule(d)
    for t in (3, 100, 500, 999):
        assert truncated_pareto_rtilde(1.5, 1000, t) == pytest.approx(s.rtilde[t - 1], rel=1e-10)
    # t << M: rtilde_t t^(2-beta) approaches a constant
    r = [truncated_pareto_rtilde(1.5, 10**6, t) * t**0.5 for t in (1000, 2000, 4000)]
    assert r[2] == pytest.approx(r[1], rel=0.01)
    # near M the immediate impact is convex
    assert np.all(np.diff(s.immediate[600:], 2) > 0)


def test_concavity_link():
    t = slice(9, 1000)
    concave = solve_schedule(make_pareto(1.5), horizon=1002)
    convex = solve_schedule(make_pareto(2.5), horizon=1002)
    assert np.all(np.diff(concave.immediate, 2)[t] < 0)
    assert np.all(np.diff(convex.immediate, 2)[t] > 0)


@given(st.lists(st.floats(0.05, 5.0), min_size=4, max_size=40), st.integers(1, 30), st.randoms())
def test_impact_up_to_t_ignores_how_larger_sizes_split(w, k, rnd):
    # I_1..I_{k+1} depend on p_1..p_k and S(k+1) only, not on the split of the mass beyond k
    k = min(k, len(w) - 2)
    tail = list(w[k:])
    rnd.shuffle(tail)
    d = make_tabulated(w)
    e = make_tabulated(list(w[:k]) + tail)
    a, b = solve_schedule(d), solve_schedule(e)
    np.testing.assert_allclose(a.immediate[: k + 1], b.immediate[: k + 1], rtol=1e-12)


def test_prefix_horizon_property():
    d = make_pareto(1.5)
    full = solve_schedule(d, horizon=500)
    for h in (2, 10, 137):
        part = solve_schedule(d, horizon=h)
        np.testing.assert_array_equal(part.immediate, full.immediate[:h])


def test_csv_export_golden():
    text = solve_schedule(make_tabulated([1, 1, 1])).to_csv()
    lines = text.splitlines()
    assert lines[0] == ",".join(CSV_HEADER)
    assert lines[3] == "3,0.3333333333333333,0.0,,0.0,2.5,2.5,-0.6666666666666667"
    assert len(lines) == 4
