"""Zeta-type and incomplete-gamma special functions for real arguments.

All routines are pure and thread-safe. Results that carry an error estimate
are returned as :class:`SpecFunResult`; ``est_abs_error`` bounds the
truncation error plus a small allowance for floating-point rounding.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

EPS = np.finfo(float).eps
_FPMIN = 1e-300
_EULER_GAMMA = 0.5772156649015329

# B_2, B_4, ..., B_28
_BERNOULLI_EVEN = (
    1.0 / 6.0,
    -1.0 / 30.0,
    1.0 / 42.0,
    -1.0 / 30.0,
    5.0 / 66.0,
    -691.0 / 2730.0,
    7.0 / 6.0,
    -3617.0 / 510.0,
    43867.0 / 798.0,
    -174611.0 / 330.0,
    854513.0 / 138.0,
    -236364091.0 / 2730.0,
    8553103.0 / 6.0,
    -23749461029.0 / 870.0,
)
_EM_TERMS = 12


@dataclass(frozen=True)
class SpecFunResult:
    value: float
    est_abs_error: float

    def __float__(self):
        return self.value


def _em_coefficients(s):
    """c_j = B_2j/(2j)! * s(s+1)...(s+2j-2), j = 1.._EM_TERMS+1."""
    coeffs = []
    poch = s  # rising factorial (s)_{2j-1}
    fact = 2.0  # (2j)!
    for j in range(1, _EM_TERMS + 2):
        if j > 1:
            poch *= (s + 2 * j - 3) * (s + 2 * j - 2)
            fact *= (2 * j - 1) * (2 * j)
        coeffs.append(_BERNOULLI_EVEN[j - 1] * poch / fact)
    return coeffs


def _shift_for(s):
    # Euler-Maclaurin tail converges fast once a + N is well above s.
    return 12.0 + s


def hurwitz_zeta_array(s, a):
    """Vectorized zeta(s, a) for real s > 1 and an array of a > 0.

    Returns ``(values, error_bounds)`` as numpy arrays.
    """
    if not s > 1:
        raise DomainError(f"hurwitz_zeta requires s > 1, got s={s!r}")
    a = np.asarray(a, dtype=float)
    if np.any(~(a > 0)):
        raise DomainError("hurwitz_zeta requires a > 0")
    flat = a.ravel()
    x0 = _shift_for(s)
    shift = np.where(flat < x0, np.ceil(x0 - flat), 0.0).astype(np.int64)
    direct = np.zeros_like(flat)
    nmax = int(shift.max()) if flat.size else 0
    if nmax:
        small = shift > 0
        k = np.arange(nmax, dtype=float)
        base = flat[small][:, None] + k[None, :]
        terms = base ** (-s)
        terms[k[None, :] >= shift[small][:, None]] = 0.0
        # smallest terms first
        direct[small] = terms[:, ::-1].sum(axis=1)
    x = flat + shift
    coeffs = _em_coefficients(s)
    tail = x ** (1.0 - s) / (s - 1.0) + 0.5 * x ** (-s)
    xpow = x ** (-s - 1.0)
    inv_x2 = 1.0 / (x * x)
    corr = np.zeros_like(x)
    for j in range(_EM_TERMS):
        corr += coeffs[j] * xpow
        xpow = xpow * inv_x2
    remainder = np.abs(coeffs[_EM_TERMS] * xpow)
    values = direct + tail + corr
    errors = remainder + 4.0 * EPS * np.abs(values) * (1.0 + np.sqrt(shift))
    return values.reshape(a.shape), errors.reshape(a.shape)


def hurwitz_zeta(s: float, a: float) -> SpecFunResult:
    """Hurwitz zeta function sum_{k>=0} (a + k)^(-s) for s > 1, a > 0."""
    if not (s > 1 and a > 0):
        raise DomainError(f"hurwitz_zeta requires s > 1 and a > 0, got s={s!r}, a={a!r}")
    values, errors = hurwitz_zeta_array(s, np.array([a], dtype=float))
    return SpecFunResult(float(values[0]), float(errors[0]))


def riemann_zeta(s: float) -> SpecFunResult:
    """Riemann zeta function for real s > 1."""
    if not s > 1:
        raise DomainError(f"riemann_zeta requires s > 1, got s={s!r}")
    return hurwitz_zeta(s, 1.0)


def generalized_harmonic(M: int, s: float) -> float:
    """Generalized harmonic number H_M^(s) = sum_{n=1}^{M} n^(-s)."""
    if int(M) != M or M < 1:
        raise DomainError(f"generalized_harmonic requires integer M >= 1, got {M!r}")
    n = np.arange(1, int(M) + 1, dtype=float)
    return math.fsum(n ** (-s))


def _gamma_series(a, z):
    """Lower incomplete gamma by its power series, a > 0."""
    term = 1.0 / a
    total = term
    ap = a
    for _ in range(100000):
        ap += 1.0
        term *= z / ap
        total += term
        if abs(term) < abs(total) * EPS:
            break
    else:
        raise ArithmeticError("incomplete gamma series failed to converge")
    prefactor = math.exp(-z + a * math.log(z))
    return total * prefactor, (abs(term) + 2 * EPS * abs(total)) * prefactor


def _gamma_cf(a, z):
    """Upper incomplete gamma by modified Lentz continued fraction."""
    b = z + 1.0 - a
    c = 1.0 / _FPMIN
    d = 1.0 / b if b != 0 else 1.0 / _FPMIN
    h = d
    delta = 0.0
    for i in range(1, 100000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < EPS:
            break
    else:
        raise ArithmeticError("incomplete gamma continued fraction failed to converge")
    prefactor = math.exp(-z + a * math.log(z))
    value = prefactor * h
    return value, abs(value) * (abs(delta - 1.0) + 8 * EPS)


def _e1_series(z):
    """E_1(z) = Gamma(0, z) for 0 < z <= 1."""
    total = 0.0
    term = 1.0
    for k in range(1, 200):
        term *= -z / k
        contrib = term / k
        total += contrib
        if abs(contrib) < EPS * abs(total):
            break
    value = -_EULER_GAMMA - math.log(z) - total
    return value, 8 * EPS * (abs(value) + abs(math.log(z)) + 1.0)


def _upper_gamma(a, z):
    if z > a + 1.0:
        return _gamma_cf(a, z)
    if a > 0:
        lower, err = _gamma_series(a, z)
        complete = math.gamma(a)
        value = complete - lower
        return value, err + 4 * EPS * complete
    # a <= 0 and z <= 1: climb to a0 in [0, 1) then recur downward.
    steps = int(math.ceil(-a))
    a0 = a + steps
    if a0 >= 1.0:
        a0 -= 1.0
        steps -= 1
    if a0 == 0.0:
        value, err = _e1_series(z)
    else:
        value, err = _upper_gamma(a0, z)
    b = a0
    ez = math.exp(-z)
    for _ in range(steps):
        b -= 1.0
        # Gamma(b, z) = (Gamma(b+1, z) - z^b e^{-z}) / b
        value = (value - z**b * ez) / b
        err = err / abs(b) + 4 * EPS * abs(value)
    return value, err


def upper_incomplete_gamma(a: float, z: float) -> SpecFunResult:
    """Upper incomplete gamma function Gamma(a, z) for real a and z > 0."""
    if not z > 0:
        raise DomainError(f"upper_incomplete_gamma requires z > 0, got z={z!r}")
    if not math.isfinite(a):
        raise DomainError(f"upper_incomplete_gamma requires finite a, got a={a!r}")
    value, err = _upper_gamma(float(a), float(z))
    return SpecFunResult(value, err)


def _expint_cf(nu, z):
    b = z + nu
    c = 1.0 / _FPMIN
    d = 1.0 / b
    h = d
    delta = 0.0
    for i in range(1, 100000):
        an = -i * (nu - 1.0 + i)
        b += 2.0
        d = an * d + b
        if abs(d) < _FPMIN:
            d = _FPMIN
        d = 1.0 / d
        c = b + an / c
        if abs(c) < _FPMIN:
            c = _FPMIN
        delta = c * d
        h *= delta
        if abs(delta - 1.0) < EPS:
            break
    else:
        raise ArithmeticError("exponential integral continued fraction failed to converge")
    value = h * math.exp(-z)
    return value, abs(value) * (abs(delta - 1.0) + 8 * EPS)


def exponential_integral(nu: float, z: float) -> SpecFunResult:
    """Generalized exponential integral E_nu(z) = int_1^inf e^{-zt} t^{-nu} dt, z > 0."""
    if not z > 0:
        raise DomainError(f"exponential_integral requires z > 0, got z={z!r}")
    if z > 1.0:
        value, err = _expint_cf(float(nu), float(z))
        return SpecFunResult(value, err)
    g = upper_incomplete_gamma(1.0 - nu, z)
    scale = z ** (nu - 1.0)
    return SpecFunResult(scale * g.value, scale * g.est_abs_error)
