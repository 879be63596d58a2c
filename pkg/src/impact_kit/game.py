"""Monte Carlo simulation of the multi-period metaorder trading game.

Each path flips whether a metaorder is present, draws its length, and
generates day-trader noise. Market makers quote the equilibrium immediate
impact on top of the noise they infer from day-trader flow, so the
transaction price after t lots is S0 + I_t * present + sum_{i<=t} eta_i,
and the final price adds the realized signal to the accumulated noise.

Randomness is counter based: block b of ``BLOCK_SIZE`` consecutive paths is
driven by a Philox generator keyed on (seed, b), so results do not depend
on how blocks are spread over workers.
"""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .distributions import SizeDistribution, make_geometric, sample_sizes
from .errors import DomainError
from .impact import ImpactSchedule

SCHEMA_VERSION = 1
BLOCK_SIZE = 2048
THREADS_ENV = "IMPACT_KIT_THREADS"
ETA_LAWS = ("gaussian", "laplace", "uniform")
PATH_EXPORT_LIMIT = 100


@dataclass(frozen=True)
class GameConfig:
    """One trading game. ``eta_scale`` is the noise standard deviation."""

    dist: SizeDistribution
    schedule: ImpactSchedule
    mu: float = 0.5
    K: int = 100
    null_dist: SizeDistribution = field(default_factory=lambda: make_geometric(0.5))
    eta_law: str = "gaussian"
    eta_scale: float | None = None
    F: str = "identity"
    S0: float = 100.0
    n_paths: int = 10000
    seed: int = 0
    alpha_dispersion: float = 0.0

    def __post_init__(self):
        if not 0 <= self.mu <= 1:
            raise DomainError(f"mu must lie in [0, 1], got {self.mu!r}")
        if int(self.K) != self.K or self.K < 1:
            raise DomainError(f"K must be a positive integer, got {self.K!r}")
        if self.eta_law not in ETA_LAWS:
            raise DomainError(f"unknown noise law {self.eta_law!r}; choose from {ETA_LAWS}")
        if self.noise_scale < 0:
            raise DomainError("eta_scale must be nonnegative")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            raise DomainError(f"n_paths must be a positive integer, got {self.n_paths!r}")
        if not 0 <= int(self.seed) < 2**64:
            raise DomainError("seed must fit in 64 unsigned bits")
        if self.alpha_dispersion < 0:
            raise DomainError("alpha_dispersion must be nonnegative")

    @property
    def noise_scale(self) -> float:
        if self.eta_scale is None:
            return 0.5 * self.schedule.Rtilde1
        return float(self.eta_scale)

    def echo(self) -> dict:
        return {
            "dist": self.dist.describe(),
            "null_dist": self.null_dist.describe(),
            "mu": self.mu,
            "K": int(self.K),
            "eta_law": self.eta_law,
            "eta_scale": self.noise_scale,
            "F": self.F,
            "S0": self.S0,
            "n_paths": int(self.n_paths),
            "seed": int(self.seed),
            "alpha_dispersion": self.alpha_dispersion,
            "R0": self.schedule.R0,
            "Rtilde1": self.schedule.Rtilde1,
            "M": self.schedule.support_max,
        }


def _draw_noise(rng, law, scale, shape):
    if law == "gaussian":
        return scale * rng.standard_normal(shape)
    if law == "laplace":
        return rng.laplace(0.0, scale / math.sqrt(2.0), shape)
    half = scale * math.sqrt(3.0)
    return rng.uniform(-half, half, shape)


@dataclass
class _Tally:
    """Count, mean and sum of squared deviations per index.

    Blocks are summarized with two passes and merged pairwise (Chan et al.)
    in block order, so totals are reproducible and constant data has zero
    spread exactly.
    """

    count: np.ndarray
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n, dtype=np.int64), np.zeros(n), np.zeros(n))

    @classmethod
    def of(cls, n, idx, values):
        count = np.bincount(idx, minlength=n).astype(np.int64)
        with np.errstate(invalid="ignore", divide="ignore"):
            mean = np.bincount(idx, weights=values, minlength=n) / count
        mean[count == 0] = 0.0
        dev = values - mean[idx]
        m2 = np.bincount(idx, weights=dev * dev, minlength=n)
        return cls(count, mean, m2)

    def merge(self, other):
        n_a, n_b = self.count.astype(float), other.count.astype(float)
        n = n_a + n_b
        with np.errstate(invalid="ignore", divide="ignore"):
            delta = other.mean - self.mean
            mean = np.where(n > 0, self.mean + delta * (n_b / n), 0.0)
            m2 = self.m2 + other.m2 + np.where(n > 0, delta * delta * n_a * n_b / n, 0.0)
        self.count = self.count + other.count
        self.mean = mean
        self.m2 = m2

    def mean_and_se(self):
        n = self.count.astype(float)
        mean = self.mean.copy()
        with np.errstate(invalid="ignore", divide="ignore"):
            se = np.sqrt(self.m2 / (n - 1.0) / n)
        mean[n == 0] = np.nan
        se[n < 2] = np.nan
        return mean, se


@dataclass
class _Block:
    present: np.ndarray
    N: np.ndarray
    alpha: np.ndarray
    noise: np.ndarray
    final: np.ndarray
    prices: list | None
    resid: _Tally
    cont: _Tally
    stop: _Tally
    profit: _Tally


@dataclass(frozen=True)
class SimulationOutcome:
    """Per-path draws plus aggregated martingale residuals and profit estimates.

    Residual tallies are indexed by t-1 for t = 1..M and pool present and
    absent paths; ``cont``/``stop`` tallies hold present paths only, split by
    whether the metaorder continued past t. Profit tallies are indexed by N-1.
    """

    config: GameConfig
    present: np.ndarray
    N: np.ndarray
    alpha: np.ndarray
    noise: np.ndarray  # sum of eta_1..eta_N per path
    final: np.ndarray
    prices: list | None
    resid: _Tally
    cont: _Tally
    stop: _Tally
    profit: _Tally

    def profit_estimates(self):
        """(pi_hat, std_error, count) per size N = 1..M."""
        mean, se = self.profit.mean_and_se()
        return mean, se, self.profit.count.copy()

    def overall_profit(self):
        """sum_N p_N N pi_hat_N with its standard error; NaN unless every size was drawn twice."""
        mean, se, count = self.profit_estimates()
        M = len(mean)
        N = np.arange(1, M + 1)
        w = self.config.dist.pmf(N) * N
        if np.any(count[w > 0] < 2):
            return math.nan, math.nan
        est = math.fsum(w * mean)
        err = math.sqrt(math.fsum((w * se) ** 2))
        return est, err

    def summary(self) -> dict:
        mean, se, count = self.profit_estimates()
        analytic = self.config.schedule.pi
        overall, overall_se = self.overall_profit()
        return {
            "schema_version": SCHEMA_VERSION,
            "config": self.config.echo(),
            "per_t": [r.as_dict() for r in martingale_diagnostic(self)],
            "per_N": [
                {
                    "N": i + 1,
                    "count": int(count[i]),
                    "pi_hat": _num(mean[i]),
                    "std_error": _num(se[i]),
                    "pi_analytic": _num(analytic[i]),
                }
                for i in range(len(mean))
            ],
            "overall_profit": {"estimate": _num(overall), "std_error": _num(overall_se)},
            **({"paths": self._paths()} if self.prices is not None else {}),
        }

    def _paths(self):
        return [
            {
                "present": bool(self.present[i]),
                "N": int(self.N[i]),
                "alpha": _num(self.alpha[i]),
                "prices": [_num(x) for x in self.prices[i]],
                "final": _num(self.final[i]),
            }
            for i in range(len(self.N))
        ]

    def to_json(self) -> str:
        return json.dumps(self.summary(), sort_keys=True, indent=2) + "\n"


def _num(x):
    x = float(x)
    return None if not math.isfinite(x) else x


def _check_support(config):
    dist, sched = config.dist, config.schedule
    if not dist.bounded:
        raise DomainError("simulation needs a finite-support size distribution")
    if not sched.complete or sched.support_max != dist.support_max:
        raise DomainError(
            f"schedule support ({sched.support_max}, horizon {sched.horizon}) does not match "
            f"the size distribution (M={dist.support_max})"
        )
    if not np.allclose(sched.p, dist.pmf(np.arange(1, dist.support_max + 1)), rtol=1e-12, atol=0):
        raise DomainError("schedule was solved on a different size distribution")


def _run_block(config, b, start, stop, keep_prices):
    n = stop - start
    sched = config.schedule
    M = sched.horizon
    key = np.array([int(config.seed), b], dtype=np.uint64)
    rng = np.random.Generator(np.random.Philox(key=key))

    present = rng.random(n) < config.mu
    n_meta = sample_sizes(config.dist, rng, n)
    n_null = sample_sizes(config.null_dist, rng, n)
    dispersion = rng.standard_normal(n)
    N = np.where(present, n_meta, n_null)
    L = int(N.max())
    eta = _draw_noise(rng, config.eta_law, config.noise_scale, (n, L))
    cols = np.arange(L)
    live = cols[None, :] < N[:, None]
    eta[~live] = 0.0
    noise = np.cumsum(eta, axis=1)

    imm = np.zeros(L)
    imm[: min(L, M)] = sched.immediate[: min(L, M)]
    rows = np.arange(n)
    alpha = np.where(present, sched.permanent[np.minimum(n_meta, M) - 1] + config.alpha_dispersion * dispersion, 0.0)
    eta_sum = noise[rows, N - 1]
    final = config.S0 + (alpha + eta_sum)
    prices = config.S0 + np.where(present[:, None], imm[None, :], 0.0) + noise

    # next valuation: following transaction price, or the final price at t = N
    nxt = np.empty_like(prices)
    nxt[:, :-1] = prices[:, 1:]
    nxt[rows, N - 1] = final
    width = min(L, M)
    r = nxt[:, :width] - prices[:, :width]
    mask = live[:, :width]
    pi_idx, ti = np.nonzero(mask)
    vals = r[pi_idx, ti]
    resid = _Tally.of(M, ti, vals)
    is_present = present[pi_idx]
    continues = N[pi_idx] - 1 > ti
    sel = is_present & continues
    cont = _Tally.of(M, ti[sel], vals[sel])
    sel = is_present & ~continues
    stop_t = _Tally.of(M, ti[sel], vals[sel])

    pp = np.flatnonzero(present)
    avg = np.cumsum(prices[pp], axis=1)[np.arange(pp.size), N[pp] - 1] / N[pp]
    profit = _Tally.of(M, N[pp] - 1, avg - final[pp])

    kept = [prices[i, : N[i]].copy() for i in range(n)] if keep_prices else None
    return _Block(present, N, alpha, eta_sum, final, kept, resid, cont, stop_t, profit)


def worker_count(requested: int | None = None) -> int:
    """Workers to use: the request, capped by IMPACT_KIT_THREADS when set."""
    n = requested or 1
    cap = os.environ.get(THREADS_ENV)
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError:
            raise DomainError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    return max(1, n)


def run_paths(config: GameConfig, workers: int | None = None, keep_prices: bool | None = None) -> SimulationOutcome:
    """Simulate ``config.n_paths`` independent games.

    Transaction prices are kept per path when ``keep_prices`` is set, by
    default only for runs of at most ``PATH_EXPORT_LIMIT`` paths.
    """
    _check_support(config)
    if keep_prices is None:
        keep_prices = config.n_paths <= PATH_EXPORT_LIMIT
    n_paths = int(config.n_paths)
    bounds = [(b, s, min(s + BLOCK_SIZE, n_paths)) for b, s in enumerate(range(0, n_paths, BLOCK_SIZE))]

    def job(args):
        return _run_block(config, *args, keep_prices)

    n_workers = worker_count(workers)
    if n_workers == 1:
        blocks = [job(a) for a in bounds]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            blocks = list(pool.map(job, bounds))

    M = config.schedule.horizon
    totals = {name: _Tally.zeros(M) for name in ("resid", "cont", "stop", "profit")}
    for blk in blocks:  # fixed reduction order
        for name, tally in totals.items():
            tally.merge(getattr(blk, name))
    prices = None
    if keep_prices:
        prices = [p for blk in blocks for p in blk.prices]
    return SimulationOutcome(
        config,
        np.concatenate([b.present for b in blocks]),
        np.concatenate([b.N for b in blocks]),
        np.concatenate([b.alpha for b in blocks]),
        np.concatenate([b.noise for b in blocks]),
        np.concatenate([b.final for b in blocks]),
        prices,
        totals["resid"],
        totals["cont"],
        totals["stop"],
        totals["profit"],
    )


@dataclass(frozen=True)
class MartingaleRecord:
    """Pooled residual at step t; ``present_weighted`` combines the present-path
    branch means with the analytic weights P_t and 1 - P_t."""

    t: int
    mean_residual: float
    std_error: float
    n: int
    present_weighted: float

    def as_dict(self):
        return {
            "t": self.t,
            "mean_residual": _num(self.mean_residual),
            "std_error": _num(self.std_error),
            "n": self.n,
            "present_weighted": _num(self.present_weighted),
        }


def martingale_diagnostic(outcome: SimulationOutcome) -> list[MartingaleRecord]:
    """Mean of (next valuation - current transaction price) at each step t."""
    mean, se = outcome.resid.mean_and_se()
    cmean, _ = outcome.cont.mean_and_se()
    smean, _ = outcome.stop.mean_and_se()
    P = outcome.config.schedule.cont
    out = []
    for i in range(len(mean)):
        if outcome.resid.count[i] == 0:
            continue
        c = cmean[i] if outcome.cont.count[i] else 0.0
        s = smean[i] if outcome.stop.count[i] else 0.0
        weighted = P[i] * c + (1.0 - P[i]) * s
        if (P[i] > 0 and not outcome.cont.count[i]) or (P[i] < 1 and not outcome.stop.count[i]):
            weighted = math.nan
        out.append(MartingaleRecord(i + 1, float(mean[i]), float(se[i]), int(outcome.resid.count[i]), float(weighted)))
    return out


def max_abs_z(records: list[MartingaleRecord], atol: float = 0.0, min_n: int = 2) -> float:
    """Largest |mean|/SE over steps with at least ``min_n`` paths.

    Steps where every path is an exact stop carry pure rounding residuals,
    so their z-scores are meaningless; ``atol`` screens them out. Sparse
    steps of heavy-tailed laws have skewed residuals whose sample SE is
    unreliable, which ``min_n`` guards against.
    """
    z = 0.0
    for r in records:
        if r.n < max(min_n, 2) or abs(r.mean_residual) <= atol:
            continue
        if not r.std_error > 0:
            return math.inf
        z = max(z, abs(r.mean_residual) / r.std_error)
    return z


def rounding_tol(config: GameConfig) -> float:
    return 1e-9 * (abs(config.S0) + config.schedule.scale() + config.noise_scale)


def nash_deviation(config: GameConfig, N: int, delta: int) -> float:
    """Change in one long-term trader's profit from trading delta extra lots.

    dPi = -pi_N - |delta| (N + delta)/(N K + delta) (S_{N+1} - mean_{t<=N} S_t)
    at the symmetric equilibrium n_k = N, on the analytic schedule.
    """
    sched = config.schedule
    M = sched.horizon
    N, delta = int(N), int(delta)
    if not 1 < N < M:
        raise DomainError(f"need 1 < N < M={M}, got N={N}")
    if delta not in (-1, 0, 1):
        raise DomainError(f"delta must be -1, 0 or +1, got {delta}")
    K = int(config.K)
    pi_N = float(sched.pi[N - 1])
    mean_price = config.S0 + math.fsum(sched.immediate[:N]) / N
    next_price = config.S0 + float(sched.immediate[N])
    weight = abs(delta) * (N + delta) / (N * K + delta)
    return -pi_N - weight * (next_price - mean_price)


@dataclass(frozen=True)
class DetectionTime:
    """Steps needed to detect a metaorder, and the participation cap for hiding size N."""

    steps: float
    q: float

    def max_participation(self, N: float) -> float:
        return self.q / math.sqrt(N)


def detection_time(q: float, z: float) -> DetectionTime:
    """Order-sign imbalance q sqrt(t) is reached after t = (q/z)^2 steps at participation z."""
    if not q > 0:
        raise DomainError(f"q must be positive, got {q!r}")
    if not 0 < z <= 1:
        raise DomainError(f"participation rate must lie in (0, 1], got {z!r}")
    return DetectionTime((q / z) ** 2, q)
