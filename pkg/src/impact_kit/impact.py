"""Equilibrium impact schedule from the martingale and fair-pricing conditions.

Given a size law p_N the martingale condition fixes the ratio of the price
response on continuation (``rtilde``) to the reversion on stopping
(``rrev``), and fair pricing for 1 < N < M fixes their scale up to the
free constant ``Rtilde1``. ``R0`` is the impact of the first lot.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, replace

import numpy as np

from .distributions import SizeDistribution, continuation_prob
from .errors import DomainError, IdentityViolation, ScheduleError
from .specfun import generalized_harmonic, hurwitz_zeta_array, riemann_zeta

IDENTITY_TOL = 1e-12
CROSS_TOL = 1e-10

CSV_HEADER = ("t", "p", "P_cont", "Rtilde", "R", "I_immediate", "I_permanent", "pi")


@dataclass(frozen=True)
class ImpactSchedule:
    """Solved equilibrium impact, indexed by t = 1..horizon (array index t-1).

    ``rtilde[t-1]`` is the expected price step when the metaorder continues
    past t, ``rrev[t-1]`` the reversion when it stops at t, ``immediate`` the
    transaction-price displacement after t lots and ``permanent`` the
    post-completion displacement for a size-t metaorder. When the horizon
    reaches the support maximum M, ``rtilde`` at M is NaN and ``rrev`` is 0.
    """

    R0: float
    Rtilde1: float
    rtilde: np.ndarray
    rrev: np.ndarray
    immediate: np.ndarray
    permanent: np.ndarray
    p: np.ndarray
    cont: np.ndarray
    support_max: int | None
    dist_label: str = ""

    @property
    def horizon(self) -> int:
        return len(self.immediate)

    @property
    def complete(self) -> bool:
        """True when the schedule covers the whole (finite) support."""
        return self.support_max is not None and self.horizon == self.support_max

    @property
    def pi(self) -> np.ndarray:
        """Profit per lot from the definition: mean transaction price minus final price."""
        t = np.arange(1, self.horizon + 1)
        return np.cumsum(self.immediate) / t - self.permanent

    def scale(self) -> float:
        return float(np.max(np.abs(self.immediate))) if self.horizon else 1.0

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        pi = self.pi
        for i in range(self.horizon):
            row = [
                i + 1,
                self.p[i],
                self.cont[i],
                self.rtilde[i],
                self.rrev[i],
                self.immediate[i],
                self.permanent[i],
                pi[i],
            ]
            writer.writerow([_fmt(x) for x in row])
        return buf.getvalue()


def _fmt(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    return "" if math.isnan(x) else repr(x)


def _horizon_for(dist, horizon):
    if horizon is None:
        if not dist.bounded:
            raise DomainError("unbounded distributions need an explicit horizon")
        return dist.support_max
    horizon = int(horizon)
    if horizon < 1:
        raise DomainError(f"horizon must be >= 1, got {horizon}")
    if dist.bounded and horizon > dist.support_max:
        raise DomainError(f"horizon {horizon} exceeds support maximum {dist.support_max}")
    return horizon


def _check_scale(R0, Rtilde1):
    if not (math.isfinite(R0) and R0 > 0):
        raise DomainError(f"R0 must be positive, got {R0!r}")
    if not (math.isfinite(Rtilde1) and Rtilde1 >= 0):
        raise DomainError(f"Rtilde1 must be nonnegative, got {Rtilde1!r}")


def _assemble(dist, R0, Rtilde1, rtilde, rrev, p, cont):
    H = len(rrev)
    steps = np.nan_to_num(rtilde[: H - 1], nan=0.0)
    immediate = R0 + np.concatenate(([0.0], np.cumsum(steps)))
    permanent = immediate - rrev
    for arr in (rtilde, rrev, immediate, permanent, p, cont):
        arr.setflags(write=False)
    return ImpactSchedule(
        float(R0),
        float(Rtilde1),
        rtilde,
        rrev,
        immediate,
        permanent,
        p,
        cont,
        dist.support_max,
        dist.describe(),
    )


def solve_schedule(
    dist: SizeDistribution,
    R0: float = 1.0,
    Rtilde1: float = 1.0,
    horizon: int | None = None,
) -> ImpactSchedule:
    """Closed-form equilibrium schedule.

    rtilde_t = (1/t) * p_t / S(t+1) * S(2) / S(t) * Rtilde1 for t >= 2, and
    rrev_t = S(t+1)/p_t * rtilde_t, where S is the survival function.
    """
    _check_scale(R0, Rtilde1)
    H = _horizon_for(dist, horizon)
    t = np.arange(1, H + 1)
    p = dist.pmf(t)
    surv = dist.survival(np.arange(1, H + 2))
    s_t, s_next = surv[:-1], surv[1:]
    if np.any(s_t <= 0):
        bad = int(t[np.argmax(s_t <= 0)])
        raise ScheduleError(f"survival underflows to zero at t={bad}", t=bad)
    last = H if dist.bounded and H == dist.support_max else None
    interior = t if last is None else t[:-1]
    zero = interior[p[interior - 1] <= 0]
    if zero.size:
        bad = int(zero[0])
        raise ScheduleError(
            f"continuation probability is exactly 1 at t={bad} (p_t = 0); reversion is unbounded",
            t=bad,
        )
    s2 = dist.survival(2)
    rtilde = np.empty(H)
    rtilde[0] = Rtilde1
    tt = t[1:].astype(float)
    # at t = M the survival beyond vanishes and rtilde is undefined (set below)
    with np.errstate(divide="ignore", invalid="ignore"):
        rtilde[1:] = (1.0 / tt) * (p[1:] / s_next[1:]) * (s2 / s_t[1:]) * Rtilde1
        rrev = s_next / np.where(p > 0, p, 1.0) * rtilde
    if last is not None:
        rtilde[-1] = np.nan
        rrev[-1] = 0.0
    cont = s_next / s_t
    return _assemble(dist, R0, Rtilde1, rtilde, rrev, p, cont)


def solve_schedule_recursive(
    dist: SizeDistribution,
    R0: float = 1.0,
    Rtilde1: float = 1.0,
    horizon: int | None = None,
) -> ImpactSchedule:
    """Schedule from the fair-pricing recursion.

    rtilde_N = (1/N) (1 - P_N)/P_N * sum_{i<N} i rtilde_i, seeded by Rtilde1,
    using only the continuation probabilities.
    """
    _check_scale(R0, Rtilde1)
    H = _horizon_for(dist, horizon)
    cs = continuation_prob(dist, H)
    probs, stop = cs.probs, cs.stop
    last = H if dist.bounded and H == dist.support_max else None
    rtilde = np.empty(H)
    rrev = np.empty(H)
    running = 0.0
    for N in range(1, H + 1):
        P, Q = probs[N - 1], stop[N - 1]
        if N == last:
            rtilde[N - 1] = np.nan
            rrev[N - 1] = 0.0
            break
        if Q <= 0:
            raise ScheduleError(
                f"continuation probability is exactly 1 at t={N} (p_t = 0); reversion is unbounded",
                t=N,
            )
        if N == 1:
            rtilde[0] = Rtilde1
        else:
            rtilde[N - 1] = running * (Q / P) / N
        rrev[N - 1] = (P / Q) * rtilde[N - 1]
        running += N * rtilde[N - 1]
    p = dist.pmf(np.arange(1, H + 1))
    return _assemble(dist, R0, Rtilde1, rtilde, rrev, p, np.array(probs, dtype=float))


# -- identity residuals ----------------------------------------------------


def martingale_residuals(schedule: ImpactSchedule) -> np.ndarray:
    """P_t rtilde_t - (1 - P_t) rrev_t for every t with a defined rtilde."""
    n = schedule.horizon - 1 if schedule.complete else schedule.horizon
    P = schedule.cont[:n]
    return P * schedule.rtilde[:n] - (1.0 - P) * schedule.rrev[:n]


def fair_pricing_residuals(schedule: ImpactSchedule) -> np.ndarray:
    """pi_N for 1 < N < M (or N up to the horizon for partial schedules)."""
    n = schedule.horizon - 1 if schedule.complete else schedule.horizon
    return schedule.pi[1:n]


# -- profits ------------------------------------------------------------------


@dataclass(frozen=True)
class ProfitReport:
    """Market-maker profit per lot pi_N and its size-weighted totals."""

    pi: np.ndarray
    pi_rewrite: np.ndarray
    weights: np.ndarray  # p_N * N
    overall: float

    def partial(self, Nbar: int) -> float:
        """sum_{N <= Nbar} p_N N pi_N."""
        return math.fsum(self.weights[:Nbar] * self.pi[:Nbar])


def _pi_rewrite(schedule, n):
    # pi_N = R_N - (1/N) sum_{i<N} i rtilde_i
    N = np.arange(1, n + 1)
    steps = np.nan_to_num(schedule.rtilde[:n], nan=0.0) * N
    before = np.concatenate(([0.0], np.cumsum(steps)[:-1]))
    return schedule.rrev[:n] - before / N


def profit_report(schedule: ImpactSchedule, dist: SizeDistribution) -> ProfitReport:
    """Profits per lot by definition and by the martingale rewrite, cross-checked."""
    if not dist.bounded:
        raise DomainError("profit_report needs a finite-support distribution")
    if schedule.horizon != dist.support_max:
        raise DomainError("schedule must cover the full support")
    M = dist.support_max
    pi = schedule.pi
    alt = _pi_rewrite(schedule, M)
    gap = float(np.max(np.abs(pi - alt)))
    if gap > IDENTITY_TOL * schedule.scale():
        raise IdentityViolation(f"profit per lot: definition and rewrite differ by {gap:.3e}")
    N = np.arange(1, M + 1)
    weights = dist.pmf(N) * N
    overall = math.fsum(weights * pi)
    for arr in (pi, alt, weights):
        arr.setflags(write=False)
    return ProfitReport(pi, alt, weights, overall)


def partial_profit(
    report: ProfitReport | None,
    schedule: ImpactSchedule,
    dist: SizeDistribution,
    Nbar: int,
) -> float:
    """Profit over metaorders of size <= Nbar, checked against the product identity.

    sum_{N<=Nbar} p_N N pi_N = S(Nbar+1) * sum_{i<=Nbar} i rtilde_i. Works
    for unbounded support as long as Nbar is within the schedule horizon.
    """
    Nbar = int(Nbar)
    limit = dist.support_max if dist.bounded else schedule.horizon + 1
    if not 1 <= Nbar < limit or Nbar > schedule.horizon:
        raise DomainError(f"Nbar must satisfy 1 <= Nbar < {limit}, got {Nbar}")
    N = np.arange(1, Nbar + 1)
    if report is not None:
        lhs = report.partial(Nbar)
    else:
        lhs = math.fsum(dist.pmf(N) * N * schedule.pi[:Nbar])
    rhs = dist.survival(Nbar + 1) * math.fsum(N * schedule.rtilde[:Nbar])
    tol = IDENTITY_TOL * max(abs(rhs), schedule.scale() * dist.survival(2), 1e-300)
    if abs(lhs - rhs) > tol:
        raise IdentityViolation(f"partial-sum identity fails at Nbar={Nbar}: {lhs!r} != {rhs!r}")
    if lhs < -tol:
        raise IdentityViolation(f"partial profit negative at Nbar={Nbar}: {lhs!r}")
    return lhs


# -- perturbations used by negative controls ---------------------------------


def corrupt_rtilde(schedule: ImpactSchedule, t: int, factor: float) -> ImpactSchedule:
    """Scale rtilde_t by ``factor`` and re-accumulate the immediate impact.

    Reversions and permanent impacts are left untouched, so the martingale
    condition breaks at step t.
    """
    if not 1 <= t < schedule.horizon:
        raise DomainError(f"cannot corrupt rtilde at t={t}")
    rtilde = np.array(schedule.rtilde)
    rtilde[t - 1] *= factor
    steps = np.nan_to_num(rtilde[:-1], nan=0.0)
    immediate = schedule.R0 + np.concatenate(([0.0], np.cumsum(steps)))
    for arr in (rtilde, immediate):
        arr.setflags(write=False)
    return replace(schedule, rtilde=rtilde, immediate=immediate)


def with_profit(schedule: ImpactSchedule, N: int, pi: float) -> ImpactSchedule:
    """Shift the permanent impact of size-N metaorders so that pi_N equals ``pi``."""
    if not 1 <= N <= schedule.horizon:
        raise DomainError(f"N={N} outside schedule")
    permanent = np.array(schedule.permanent)
    mean_price = math.fsum(schedule.immediate[:N]) / N
    permanent[N - 1] = mean_price - pi
    permanent.setflags(write=False)
    return replace(schedule, permanent=permanent)


# -- distribution-specific closed forms -------------------------------------


@dataclass(frozen=True)
class ParetoAsymptotics:
    rtilde_exact: float
    immediate_scaling: float
    permanent_over_immediate: float


def pareto_asymptotics(beta: float, t: int) -> ParetoAsymptotics:
    """Exact Pareto rtilde_t / Rtilde1 plus the large-t scaling of the impact.

    rtilde_t / Rtilde1 = t^-(2+beta) (zeta(1+beta) - 1) / (zeta(1+beta, t) zeta(1+beta, t+1))
    for t >= 2; the immediate impact grows like t^(beta-1), or log(t+1) at
    beta = 1, and permanent/immediate tends to 1/beta.
    """
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta!r}")
    t = int(t)
    if t < 1:
        raise DomainError(f"t must be >= 1, got {t}")
    s = 1.0 + beta
    if t == 1:
        exact = 1.0
    else:
        z, _ = hurwitz_zeta_array(s, np.array([t, t + 1], dtype=float))
        exact = float(t) ** (-(2.0 + beta)) * (riemann_zeta(s).value - 1.0) / (z[0] * z[1])
    scaling = math.log(t + 1.0) if beta == 1 else float(t) ** (beta - 1.0)
    return ParetoAsymptotics(exact, scaling, 1.0 / beta)


@dataclass(frozen=True)
class StretchedAsymptotics:
    immediate: float
    permanent: float
    ratio: float
    log_immediate: float
    log_permanent: float


def _log_scaled_integral(lam, N):
    """log of int_1^N exp(x^lam) x^(lam-2) dx, evaluated with the peak factored out."""
    from scipy.integrate import quad

    peak = float(N) ** lam

    def integrand(x):
        return math.exp(x**lam - peak) * x ** (lam - 2.0)

    # integrand is concentrated within a few e-folds of N
    width = max(1.0, 50.0 * float(N) ** (1.0 - lam) / lam)
    lo = max(1.0, N - width)
    val, _ = quad(integrand, lo, N, epsabs=0.0, epsrel=1e-12, limit=200)
    if lo > 1.0:
        rest, _ = quad(integrand, 1.0, lo, epsabs=0.0, epsrel=1e-10, limit=200)
        val += rest
    return peak + math.log(val)


def stretched_asymptotics(lam: float, t: int) -> StretchedAsymptotics:
    """Large-size impact for the stretched exponential law, evaluated in log space.

    immediate ~ exp(t^lam) / t^(2-lam); permanent is the running average of
    the immediate impact, (1/t) int^t; ratio is the leading-order value
    1/(lam t^lam). Values that overflow a double are returned as inf, the
    logs stay finite.
    """
    if not lam > 0:
        raise DomainError(f"lam must be positive, got {lam!r}")
    t = int(t)
    if t < 2:
        raise DomainError(f"t must be >= 2, got {t}")
    log_imm = float(t) ** lam - (2.0 - lam) * math.log(t)
    log_perm = _log_scaled_integral(lam, t) - math.log(t)
    return StretchedAsymptotics(
        immediate=_safe_exp(log_imm),
        permanent=_safe_exp(log_perm),
        ratio=1.0 / (lam * float(t) ** lam),
        log_immediate=log_imm,
        log_permanent=log_perm,
    )


def _safe_exp(x):
    return math.exp(x) if x < 709.0 else math.inf


def truncated_pareto_rtilde(beta: float, M: int, t: int, Rtilde1: float = 1.0) -> float:
    """rtilde_t for the Pareto law truncated at M, from Hurwitz zeta differences.

    (H_M^(1+beta) - 1) / ((zeta(s,t) - zeta(s,M+1)) (zeta(s,t+1) - zeta(s,M+1))) * Rtilde1 / t^(2+beta)
    with s = 1 + beta, valid for 2 < t < M.
    """
    M, t = int(M), int(t)
    if not 2 < t < M:
        raise DomainError(f"need 2 < t < M, got t={t}, M={M}")
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta!r}")
    s = 1.0 + beta
    z, _ = hurwitz_zeta_array(s, np.array([t, t + 1, M + 1], dtype=float))
    harmonic = generalized_harmonic(M, s)
    d_t = z[0] - z[2]
    d_next = z[1] - z[2]
    return (harmonic - 1.0) / (d_t * d_next) * Rtilde1 / float(t) ** (2.0 + beta)


def truncated_pareto_continuation(beta: float, M: int, t: int) -> float:
    """P_t for the truncated Pareto law from Hurwitz zeta differences."""
    s = 1.0 + beta
    z, _ = hurwitz_zeta_array(s, np.array([t, t + 1, M + 1], dtype=float))
    return (z[1] - z[2]) / (z[0] - z[2])


__all__ = [
    "ImpactSchedule",
    "ProfitReport",
    "solve_schedule",
    "solve_schedule_recursive",
    "profit_report",
    "partial_profit",
    "martingale_residuals",
    "fair_pricing_residuals",
    "corrupt_rtilde",
    "with_profit",
    "pareto_asymptotics",
    "stretched_asymptotics",
    "truncated_pareto_rtilde",
    "truncated_pareto_continuation",
    "CSV_HEADER",
]
