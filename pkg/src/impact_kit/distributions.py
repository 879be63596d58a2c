"""Metaorder size laws p_N and the quantities derived from them.

A :class:`SizeDistribution` exposes the pmf and the survival function
S(t) = sum_{i>=t} p_i on the positive integers. Unbounded families carry an
analytic survival so that continuation probabilities never rely on
truncating the tail.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .errors import DivergenceError, DomainError
from .specfun import (
    generalized_harmonic,
    hurwitz_zeta_array,
    riemann_zeta,
    upper_incomplete_gamma,
)

TABULATED = "tabulated"
PARETO = "pareto"
TRUNCATED_PARETO = "truncated_pareto"
STRETCHED_EXPONENTIAL = "stretched_exponential"
GEOMETRIC = "geometric"

# survival tables grow in chunks of this size when sampling unbounded laws
_SAMPLER_TABLE = 1 << 14


@dataclass(frozen=True)
class SizeDistribution:
    """Immutable metaorder size law on {1, ..., M} or on all positive integers.

    ``support_max`` is ``None`` for unbounded support. ``params`` holds the
    family parameters (``beta``, ``M``, ``lam``, ``q``, ``renormalize``).
    """

    family: str
    params: dict
    support_max: int | None
    _pmf_table: np.ndarray | None = field(default=None, repr=False, compare=False)
    _surv_table: np.ndarray | None = field(default=None, repr=False, compare=False)
    _norm: float = field(default=1.0, repr=False, compare=False)

    @property
    def bounded(self) -> bool:
        return self.support_max is not None

    def describe(self) -> str:
        inner = ",".join(f"{k}={v}" for k, v in self.params.items() if k != "weights")
        if self.family == TABULATED:
            inner = f"M={self.support_max}"
        return f"{self.family}({inner})"

    # -- point accessors -------------------------------------------------

    def pmf(self, n):
        """p_n for integer n (scalar or array); zero outside the support."""
        n_arr = np.asarray(n)
        scalar = n_arr.ndim == 0
        n_arr = np.atleast_1d(n_arr).astype(np.int64)
        out = np.zeros(n_arr.shape, dtype=float)
        ok = n_arr >= 1
        if self.bounded:
            ok &= n_arr <= self.support_max
        if np.any(ok):
            out[ok] = self._pmf_values(n_arr[ok])
        return float(out[0]) if scalar else out

    def survival(self, t):
        """S(t) = sum_{i >= t} p_i (scalar or array of integers)."""
        t_arr = np.asarray(t)
        scalar = t_arr.ndim == 0
        t_arr = np.atleast_1d(t_arr).astype(np.int64)
        out = np.empty(t_arr.shape, dtype=float)
        low = t_arr <= 1
        out[low] = self._survival_values(np.ones(int(low.sum()), dtype=np.int64)) if low.any() else 0.0
        high = ~low
        if self.bounded:
            beyond = t_arr > self.support_max
            out[beyond] = 0.0
            high &= ~beyond
        if np.any(high):
            out[high] = self._survival_values(t_arr[high])
        return float(out[0]) if scalar else out

    def density(self, x):
        """Continuous extension of the pmf, used for continuum density maps."""
        x = np.asarray(x, dtype=float)
        fam = self.family
        if fam in (PARETO, TRUNCATED_PARETO):
            return x ** (-(self.params["beta"] + 1.0)) / self._norm
        if fam == STRETCHED_EXPONENTIAL:
            lam = self.params["lam"]
            return np.exp(-(x**lam)) / self._norm
        if fam == GEOMETRIC:
            q = self.params["q"]
            return (1.0 - q) * q ** (x - 1.0)
        grid = np.arange(1, self.support_max + 1, dtype=float)
        return np.interp(x, grid, self._pmf_table, left=0.0, right=0.0)

    def total_mass(self) -> float:
        return self.survival(1)

    # -- family specific internals ----------------------------------------

    def _pmf_values(self, n):
        fam = self.family
        if fam in (TABULATED, TRUNCATED_PARETO):
            return self._pmf_table[n - 1]
        if fam == PARETO:
            return n.astype(float) ** (-(self.params["beta"] + 1.0)) / self._norm
        if fam == STRETCHED_EXPONENTIAL:
            return np.exp(-(n.astype(float) ** self.params["lam"])) / self._norm
        if fam == GEOMETRIC:
            q = self.params["q"]
            return (1.0 - q) * q ** (n.astype(float) - 1.0)
        raise DomainError(f"unknown family {fam!r}")

    def _survival_values(self, t):
        fam = self.family
        if fam in (TABULATED, TRUNCATED_PARETO):
            return self._surv_table[t - 1]
        if fam == PARETO:
            values, _ = hurwitz_zeta_array(self.params["beta"] + 1.0, t.astype(float))
            return values / self._norm
        if fam == GEOMETRIC:
            return self.params["q"] ** (t.astype(float) - 1.0)
        if fam == STRETCHED_EXPONENTIAL:
            return self._stretched_survival(t)
        raise DomainError(f"unknown family {fam!r}")

    def _stretched_survival(self, t):
        lam = self.params["lam"]
        tmin, tmax = int(t.min()), int(t.max())
        if float(tmax) ** lam > 600.0:
            return np.array([self._stretched_tail(int(k)) for k in t])
        # extend past tmax until exp(tmax^lam - n^lam) < 1e-18
        end = tmax + 1
        while float(end) ** lam - float(tmax) ** lam < 42.0:
            end = end + max(16, end - tmin)
        n = np.arange(tmin, end + 1, dtype=float)
        terms = np.exp(-(n**lam))
        surv = np.cumsum(terms[::-1])[::-1]
        return surv[t - tmin] / self._norm

    def _stretched_tail(self, t):
        # S(t) = p_t * sum_k exp(t^lam - (t+k)^lam), summed until negligible
        lam = self.params["lam"]
        head = t**lam
        block = 256
        total = 0.0
        start = 0
        while True:
            k = np.arange(start, start + block, dtype=float)
            terms = np.exp(head - (t + k) ** lam)
            total += float(terms.sum())
            if terms[-1] < 1e-18 * total:
                break
            start += block
            block *= 2
            if start > 10**8:
                raise DivergenceError("stretched exponential tail sum did not converge")
        return math.exp(-head) * total / self._norm

    def continuous_survival(self, t):
        """Continuum tail int_t^inf of the stretched exponential density.

        Available only for the stretched exponential family; it is the
        quantity the continuous normalization is built from.
        """
        if self.family != STRETCHED_EXPONENTIAL:
            raise DomainError("continuous_survival is defined for the stretched exponential only")
        lam = self.params["lam"]
        g = upper_incomplete_gamma(1.0 / lam, float(t) ** lam).value
        return g / (lam * self._norm)


def _finite(family, params, pmf):
    pmf = np.asarray(pmf, dtype=float)
    # reverse cumulative sum adds the smallest tail terms first
    surv = np.cumsum(pmf[::-1])[::-1].copy()
    pmf.setflags(write=False)
    surv.setflags(write=False)
    return SizeDistribution(family, params, len(pmf), pmf, surv)


def make_pareto(beta: float) -> SizeDistribution:
    """Exact Pareto law p_N = N^-(beta+1) / zeta(1+beta) on N >= 1."""
    if not beta > 0:
        raise DomainError(f"Pareto exponent must be positive, got beta={beta!r}")
    norm = riemann_zeta(1.0 + beta).value
    return SizeDistribution(PARETO, {"beta": float(beta)}, None, _norm=norm)


def make_truncated_pareto(beta: float, M: int) -> SizeDistribution:
    """Pareto law truncated to {1..M}, normalized by the harmonic number H_M^(1+beta)."""
    if not beta > 0:
        raise DomainError(f"Pareto exponent must be positive, got beta={beta!r}")
    if int(M) != M or M < 2:
        raise DomainError(f"truncated Pareto needs integer M >= 2, got M={M!r}")
    M = int(M)
    s = beta + 1.0
    harmonic = generalized_harmonic(M, s)
    n = np.arange(1, M + 1, dtype=float)
    dist = _finite(TRUNCATED_PARETO, {"beta": float(beta), "M": M}, n ** (-s) / harmonic)
    object.__setattr__(dist, "_norm", harmonic)
    return dist


def make_stretched_exponential(lam: float, renormalize: bool = False) -> SizeDistribution:
    """Stretched exponential p_N = lam exp(-N^lam) / Gamma(1/lam, 1).

    The constant normalizes the continuous density on [1, inf), so the
    discrete masses sum to slightly more than one. ``renormalize=True``
    rescales them to sum to one exactly; continuation probabilities and the
    impact schedule are unaffected either way.
    """
    if not lam > 0:
        raise DomainError(f"stretched exponential needs lam > 0, got lam={lam!r}")
    norm = upper_incomplete_gamma(1.0 / lam, 1.0).value / lam
    dist = SizeDistribution(
        STRETCHED_EXPONENTIAL,
        {"lam": float(lam), "renormalize": bool(renormalize)},
        None,
        _norm=norm,
    )
    if renormalize:
        mass = dist.survival(1)
        object.__setattr__(dist, "_norm", norm * mass)
    return dist


def make_geometric(q: float) -> SizeDistribution:
    """Geometric law p_N = (1 - q) q^(N-1); continuation probability is q at every step."""
    if not 0 < q < 1:
        raise DomainError(f"geometric law needs 0 < q < 1, got q={q!r}")
    return SizeDistribution(GEOMETRIC, {"q": float(q)}, None)


def make_tabulated(weights) -> SizeDistribution:
    """Normalize nonnegative weights w_1..w_M into a pmf; trailing zeros are dropped."""
    w = np.asarray(weights, dtype=float).ravel()
    if w.size == 0 or np.any(~np.isfinite(w)):
        raise DomainError("tabulated weights must be a nonempty array of finite numbers")
    if np.any(w < 0):
        raise DomainError("tabulated weights must be nonnegative")
    if not np.any(w > 0):
        raise DomainError("tabulated weights must contain a strictly positive entry")
    try:
        total = math.fsum(w)
    except OverflowError:
        raise DomainError("tabulated weights overflow when summed; rescale them") from None
    p = w / total
    # trim after normalizing: tiny weights can underflow to zero mass
    keep = int(np.flatnonzero(p > 0)[-1]) + 1
    w, p = w[:keep], p[:keep]
    return _finite(TABULATED, {"weights": tuple(float(x) for x in w)}, p)


def load_tabulated(path) -> SizeDistribution:
    """Read a one-column weight file (blank lines and ``#`` comments ignored)."""
    weights = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            weights.append(float(line))
        except ValueError:
            raise DomainError(f"{path}:{lineno}: not a number: {line!r}") from None
    return make_tabulated(weights)


def tabulate(dist: SizeDistribution, M: int) -> SizeDistribution:
    """Tabulated copy of the first M masses of ``dist`` (unnormalized tail dropped)."""
    return make_tabulated(dist.pmf(np.arange(1, M + 1)))


# -- continuation --------------------------------------------------------


@dataclass(frozen=True)
class ContinuationSchedule:
    """Continuation probabilities P_t for t = 1..horizon.

    ``stop`` holds 1 - P_t computed directly as p_t / S(t), which stays
    accurate where P_t is close to one.
    """

    probs: np.ndarray
    stop: np.ndarray

    @property
    def horizon(self) -> int:
        return len(self.probs)

    def __getitem__(self, t):
        return self.probs[t - 1]


def continuation_prob(dist: SizeDistribution, horizon: int) -> ContinuationSchedule:
    """P_t = S(t+1)/S(t) for t = 1..horizon."""
    horizon = int(horizon)
    if horizon < 1:
        raise DomainError(f"horizon must be >= 1, got {horizon}")
    if dist.bounded and horizon > dist.support_max:
        raise DomainError(f"horizon {horizon} exceeds support maximum {dist.support_max}")
    t = np.arange(1, horizon + 2)
    surv = dist.survival(t)
    if np.any(surv[:-1] <= 0):
        bad = int(t[np.argmax(surv[:-1] <= 0)])
        raise DomainError(f"survival vanishes at t={bad}; continuation undefined")
    probs = surv[1:] / surv[:-1]
    stop = dist.pmf(t[:-1]) / surv[:-1]
    return ContinuationSchedule(probs, stop)


# -- expectations ----------------------------------------------------------


def expectation_over_sizes(
    dist: SizeDistribution,
    t: int,
    f: Callable,
    degree: float | None = None,
    horizon: int = 4096,
) -> float:
    """E_t[f] = sum_{N>=t} p_N f(N) / sum_{N>=t} p_N.

    For unbounded support ``f`` must grow at most polynomially and
    ``degree`` declares the growth exponent d, so that f(N) ~ c N^d. Beyond
    ``horizon`` the Pareto tail is summed analytically with c taken from
    f at the horizon; light-tailed families are summed until the terms are
    negligible.
    """
    t = int(t)
    surv_t = dist.survival(t)
    if not surv_t > 0:
        raise DomainError(f"no mass at or beyond t={t}")
    if dist.bounded:
        n = np.arange(t, dist.support_max + 1)
        vals = np.asarray([f(int(k)) for k in n], dtype=float)
        return math.fsum(dist.pmf(n) * vals) / surv_t

    if degree is None:
        raise DomainError("unbounded support requires the growth degree of f")
    if dist.family == PARETO:
        beta = dist.params["beta"]
        if degree >= beta:
            raise DivergenceError(
                f"E[f] diverges: f grows like N^{degree} and the tail exponent is {beta}"
            )
        end = max(horizon, t)
        n = np.arange(t, end)
        vals = np.asarray([f(int(k)) for k in n], dtype=float)
        head = math.fsum(dist.pmf(n) * vals) if n.size else 0.0
        coef = f(end) / float(end) ** degree
        zt, _ = hurwitz_zeta_array(beta + 1.0 - degree, np.array([float(end)]))
        tail = coef * float(zt[0]) / dist._norm
        return (head + tail) / surv_t

    total = 0.0
    start = t
    block = max(horizon, 256)
    for _ in range(64):
        n = np.arange(start, start + block)
        p = dist.pmf(n)
        vals = np.asarray([f(int(k)) for k in n], dtype=float)
        contrib = p * vals
        total += math.fsum(contrib)
        if abs(contrib[-1]) <= 1e-18 * abs(total) and p[-1] <= 1e-18 * surv_t:
            return total / surv_t
        start += block
    raise DivergenceError("expectation tail failed to converge")


# -- sampling ----------------------------------------------------------------


class _SurvivalTable:
    """Normalized survival values S(n)/S(1) for n = 1..len, grown lazily."""

    def __init__(self, dist):
        self.dist = dist
        self.mass = dist.survival(1)
        self.size = 0
        self.values = np.empty(0)

    def ensure(self, size):
        if size <= self.size:
            return
        if self.dist.bounded:
            size = self.dist.support_max + 1
        n = np.arange(1, size + 1)
        self.values = self.dist.survival(n) / self.mass
        self.size = size


def sample_sizes(dist: SizeDistribution, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` metaorder lengths by inverting the survival function.

    N is the smallest n with S(n+1) < u S(1), u uniform on (0, 1].
    """
    u = 1.0 - rng.random(size)
    if dist.family == GEOMETRIC:
        q = dist.params["q"]
        # S(n+1) = q^n < u  <=>  n > log(u)/log(q)
        n = np.floor(np.log(u) / math.log(q)) + 1.0
        return n.astype(np.int64)
    table = _SurvivalTable(dist)
    table.ensure(dist.support_max + 1 if dist.bounded else _SAMPLER_TABLE)
    # values[k] = S(k+1); values is decreasing
    desc = table.values
    idx = np.searchsorted(-desc, -u, side="right")  # first k with S(k+1) < u
    out = idx.astype(np.int64)
    if not dist.bounded:
        far = idx >= len(desc)
        for i in np.flatnonzero(far):
            out[i] = _invert_tail(dist, table.mass, u[i], len(desc) - 1)
    return out


def _invert_tail(dist, mass, u, lo):
    # S(lo+1) >= u; find smallest n with S(n+1) < u by doubling and bisection
    hi = lo * 2
    while dist.survival(hi + 1) / mass >= u:
        lo = hi
        hi *= 2
        if hi > 2**62:
            raise DivergenceError("sampler tail inversion overflowed")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if dist.survival(mid + 1) / mass >= u:
            lo = mid
        else:
            hi = mid
    return hi


def sample_size(dist: SizeDistribution, rng: np.random.Generator) -> int:
    """Single draw of a metaorder length."""
    return int(sample_sizes(dist, rng, 1)[0])
