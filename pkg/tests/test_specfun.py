from __future__ import annotations

import math

import mpmath
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import zeta_direct
from scipy import integrate

from impact_kit.errors import DomainError
from impact_kit.specfun import (
    exponential_integral,
    generalized_harmonic,
    hurwitz_zeta,
    hurwitz_zeta_array,
    riemann_zeta,
    upper_incomplete_gamma,
)


def test_zeta_two_is_basel():
    r = riemann_zeta(2.0)
    assert r.value == pytest.approx(math.pi**2 / 6, rel=1e-14)
    assert 0 <= r.est_abs_error <= 1e-12 * r.value


@pytest.mark.parametrize("s", [1.5, 2.5])
def test_zeta_against_direct_sum(s):
    r = riemann_zeta(s)
    assert abs(r.value - zeta_direct(s)) <= max(r.est_abs_error, 1e-12 * r.value)
    assert r.est_abs_error <= 1e-12 * r.value


@pytest.mark.parametrize("s", [1.0, 0.5, -2.0])
def test_zeta_domain(s):
    with pytest.raises(DomainError):
        riemann_zeta(s)


def test_hurwitz_at_one_is_riemann():
    for s in (1.1, 2.0, 3.7):
        assert hurwitz_zeta(s, 1.0).value == riemann_zeta(s).value


def test_hurwitz_telescoping_example():
    diff = hurwitz_zeta(2.5, 10).value - hurwitz_zeta(2.5, 11).value
    assert diff == pytest.approx(10**-2.5, rel=1e-12)


def test_hurwitz_direct_sum():
    r = hurwitz_zeta(2.5, 3.0)
    assert r.value == pytest.approx(zeta_direct(2.5, 3.0), rel=1e-12)


@pytest.mark.parametrize("args", [(2.0, 0.0), (2.0, -1.0), (1.0, 2.0)])
def test_hurwitz_domain(args):
    with pytest.raises(DomainError):
        hurwitz_zeta(*args)


def test_hurwitz_matches_mpmath_on_grid():
    mpmath.mp.dps = 30
    for s in (1.05, 1.5, 2.0, 3.3, 8.0):
        a = np.array([0.1, 0.5, 1.0, 7.3, 100.0, 1e5])
        vals, errs = hurwitz_zeta_array(s, a)
        for ai, v, e in zip(a, vals, errs):
            ref = float(mpmath.zeta(s, ai))
            assert abs(v - ref) <= max(e, 1e-14 * abs(ref)), (s, ai)
            assert e <= 1e-12 * abs(ref)


@given(st.floats(1.01, 4.0), st.floats(0.5, 50.0))
def test_hurwitz_telescoping_property(s, a):
    diff = hurwitz_zeta(s, a).value - hurwitz_zeta(s, a + 1).value
    assert diff == pytest.approx(a ** (-s), rel=1e-11)


@given(st.floats(1.01, 4.0), st.floats(0.5, 50.0), st.floats(1e-3, 5.0))
def test_hurwitz_decreasing_in_a(s, a, da):
    assert hurwitz_zeta(s, a + da).value < hurwitz_zeta(s, a).value


def test_harmonic_examples():
    assert generalized_harmonic(1, 3.3) == 1.0
    assert generalized_harmonic(3, 1.0) == pytest.approx(11 / 6, rel=1e-15)
    n = np.arange(1, 1001, dtype=float)
    assert generalized_harmonic(1000, 2.5) == pytest.approx(math.fsum(n**-2.5), rel=1e-15)


@pytest.mark.parametrize("M", [0, -3, 2.5])
def test_harmonic_domain(M):
    with pytest.raises(DomainError):
        generalized_harmonic(M, 2.0)


@given(st.integers(1, 5000), st.floats(1.05, 4.0))
def test_harmonic_plus_tail_is_zeta(M, s):
    total = generalized_harmonic(M, s) + hurwitz_zeta(s, M + 1).value
    assert total == pytest.approx(riemann_zeta(s).value, rel=1e-11)


def test_gamma_a_one_is_exp():
    for z in (1e-3, 0.5, 1.0, 3.0, 40.0):
        assert upper_incomplete_gamma(1.0, z).value == pytest.approx(math.exp(-z), rel=1e-13)


def test_gamma_small_z_limit():
    assert upper_incomplete_gamma(2.0, 1e-12).value == pytest.approx(1.0, abs=1e-9)


def test_gamma_against_quadrature():
    a = 1 / 0.7
    ref, _ = integrate.quad(lambda t: t ** (a - 1) * math.exp(-t), 1.0, np.inf, epsabs=0, epsrel=1e-13)
    r = upper_incomplete_gamma(a, 1.0)
    assert r.value == pytest.approx(ref, rel=1e-10)
    assert r.est_abs_error <= 1e-10 * r.value


def test_gamma_negative_order_matches_mpmath():
    mpmath.mp.dps = 30
    for a in (-3.5, -2.0, -1.0, -0.3, 0.0, 0.4, 2.7):
        for z in (0.05, 0.7, 1.0, 2.5, 30.0):
            ref = float(mpmath.gammainc(a, z))
            assert upper_incomplete_gamma(a, z).value == pytest.approx(ref, rel=1e-10), (a, z)


@pytest.mark.parametrize("z", [0.0, -1.0])
def test_gamma_domain(z):
    with pytest.raises(DomainError):
        upper_incomplete_gamma(1.0, z)


@given(st.floats(-3.0, 6.0), st.floats(0.01, 30.0))
def test_gamma_recurrence(a, z):
    lhs = upper_incomplete_gamma(a + 1.0, z).value
    rhs = a * upper_incomplete_gamma(a, z).value + z**a * math.exp(-z)
    assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-300)


def test_expint_examples():
    assert exponential_integral(1.0, 1.0).value == pytest.approx(0.21938393439552029, rel=1e-13)
    ref, _ = integrate.quad(lambda t: math.exp(-t) / t, 1.0, np.inf, epsabs=0, epsrel=1e-13)
    assert exponential_integral(1.0, 1.0).value == pytest.approx(ref, rel=1e-10)
    assert exponential_integral(0.0, 2.0).value == pytest.approx(math.exp(-2) / 2, rel=1e-13)
    nu = 1 + 1 / 0.7
    ref, _ = integrate.quad(lambda t: math.exp(-5 * t) * t ** (-nu), 1.0, np.inf, epsabs=0, epsrel=1e-13)
    assert exponential_integral(nu, 5.0).value == pytest.approx(ref, rel=1e-10)


@given(st.floats(-2.0, 4.0), st.floats(0.05, 20.0))
def test_expint_reduction_identity(nu, z):
    lhs = exponential_integral(nu, z).value
    rhs = z ** (nu - 1.0) * upper_incomplete_gamma(1.0 - nu, z).value
    assert lhs == pytest.approx(rhs, rel=1e-9)


def test_expint_domain():
    with pytest.raises(DomainError):
        exponential_integral(1.0, 0.0)
