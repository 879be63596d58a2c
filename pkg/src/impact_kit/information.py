"""Equilibrium map between the information signal alpha and metaorder size N.

Signal magnitudes are assigned to sizes by matching cumulative probability:
alpha falls in bin n when cdf(alpha) lies between the cumulative masses of
sizes n-1 and n. Negative signals are handled through |alpha|.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, optimize

from .distributions import SizeDistribution
from .errors import CalibrationError, DomainError

QUAD_ABS_TOL = 1e-10
_MASS_CAP = 1.0 - 1e-12


@dataclass(frozen=True)
class InformationDensity:
    """Density of the signal magnitude on [lower, upper).

    ``partial_mean(a, b)`` returns int_a^b x pdf(x) dx; built-in densities
    supply it in closed form, otherwise it falls back to quadrature.
    """

    pdf: Callable[[float], float]
    cdf: Callable[[float], float]
    quantile: Callable[[float], float]
    lower: float
    upper: float
    label: str
    _partial_mean: Callable[[float, float], float] | None = field(default=None, repr=False)

    @property
    def alpha_max(self) -> float:
        return self.upper

    def partial_mean(self, a: float, b: float) -> float:
        if self._partial_mean is not None:
            return self._partial_mean(a, b)
        val, _ = integrate.quad(lambda x: x * self.pdf(x), a, b, epsabs=QUAD_ABS_TOL, limit=200)
        return val

    def mass(self, a: float, b: float) -> float:
        return self.cdf(b) - self.cdf(a)


def uniform_density(a: float = 0.0, b: float = 1.0) -> InformationDensity:
    if not (0 <= a < b and math.isfinite(b)):
        raise DomainError(f"uniform density needs 0 <= a < b < inf, got ({a}, {b})")
    width = b - a

    def pdf(x):
        return 1.0 / width if a <= x < b else 0.0

    def cdf(x):
        return min(max((x - a) / width, 0.0), 1.0)

    def quantile(u):
        return a + u * width

    def partial_mean(lo, hi):
        lo, hi = max(lo, a), min(hi, b)
        return 0.0 if hi <= lo else (hi * hi - lo * lo) / (2.0 * width)

    return InformationDensity(pdf, cdf, quantile, a, b, f"uniform(a={a},b={b})", partial_mean)


def pareto_tail_density(exponent: float, x_min: float = 1.0) -> InformationDensity:
    """pdf(x) = (exponent - 1) x_min^(exponent-1) x^-exponent on [x_min, inf)."""
    if not exponent > 2:
        raise DomainError(f"pareto_tail needs exponent > 2 for a finite mean, got {exponent!r}")
    if not x_min > 0:
        raise DomainError(f"pareto_tail needs x_min > 0, got {x_min!r}")
    k = exponent - 1.0

    def pdf(x):
        return k * x_min**k * x ** (-exponent) if x >= x_min else 0.0

    def cdf(x):
        if x <= x_min:
            return 0.0
        return 1.0 if math.isinf(x) else -math.expm1(k * math.log(x_min / x))

    def quantile(u):
        if u >= 1.0:
            return math.inf
        return x_min * math.exp(-math.log1p(-u) / k)

    def partial_mean(lo, hi):
        lo = max(lo, x_min)
        if hi <= lo:
            return 0.0
        c = k * x_min**k / (k - 1.0)
        upper = 0.0 if math.isinf(hi) else hi ** (1.0 - k)
        return c * (lo ** (1.0 - k) - upper)

    return InformationDensity(
        pdf, cdf, quantile, x_min, math.inf, f"pareto_tail(exponent={exponent},x_min={x_min})", partial_mean
    )


def table_density(x, pdf_values) -> InformationDensity:
    """Piecewise-linear density through the points (x_i, pdf_i), renormalized."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(pdf_values, dtype=float)
    if x.ndim != 1 or x.size < 2 or x.shape != y.shape:
        raise DomainError("table density needs matching 1-D arrays with at least two points")
    if np.any(np.diff(x) <= 0) or x[0] < 0:
        raise DomainError("table density abscissae must be nonnegative and strictly increasing")
    if np.any(y < 0) or not np.any(y > 0):
        raise DomainError("table density values must be nonnegative with positive mass")
    dx = np.diff(x)
    seg = 0.5 * (y[:-1] + y[1:]) * dx
    total = math.fsum(seg)
    y = y / total
    seg = seg / total
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    slope = np.diff(y) / dx

    def _locate(v):
        return int(np.clip(np.searchsorted(x, v, side="right") - 1, 0, len(dx) - 1))

    def pdf(v):
        if v < x[0] or v >= x[-1]:
            return 0.0
        return float(np.interp(v, x, y))

    def cdf(v):
        if v <= x[0]:
            return 0.0
        if v >= x[-1]:
            return 1.0
        i = _locate(v)
        h = v - x[i]
        return float(cum[i] + y[i] * h + 0.5 * slope[i] * h * h)

    def quantile(u):
        if u <= 0:
            return float(x[0])
        if u >= 1:
            return float(x[-1])
        return optimize.brentq(lambda v: cdf(v) - u, x[0], x[-1], xtol=1e-14, rtol=4 * np.finfo(float).eps)

    def partial_mean(lo, hi):
        lo, hi = max(lo, x[0]), min(hi, x[-1])
        if hi <= lo:
            return 0.0
        # pdf is linear on each segment, so Simpson's rule is exact there
        pts = np.concatenate(([lo], x[(x > lo) & (x < hi)], [hi]))
        total = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            m = 0.5 * (a + b)
            total += (b - a) / 6.0 * (a * pdf(a) + 4 * m * pdf(m) + b * _left_pdf(b))
        return total

    def _left_pdf(v):
        # value at v approached from the left (pdf is continuous inside the table)
        return float(np.interp(v, x, y)) if x[0] <= v <= x[-1] else 0.0

    return InformationDensity(pdf, cdf, quantile, float(x[0]), float(x[-1]), "table", partial_mean)


def load_table_density(path) -> InformationDensity:
    """Two whitespace-separated columns per line: alpha and density value."""
    xs, ys = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise DomainError(f"{path}:{lineno}: expected two columns")
        xs.append(float(parts[0]))
        ys.append(float(parts[1]))
    return table_density(xs, ys)


@dataclass(frozen=True)
class InformationMap:
    """Bins of signal magnitude assigned to sizes 1..len(thresholds).

    ``thresholds[n-1]`` is the upper edge alpha_n of bin n (alpha_0 is the
    density's lower edge) and ``cond_mean[n-1]`` the mean signal in it.
    """

    lower: float
    thresholds: np.ndarray
    cond_mean: np.ndarray
    bin_mass: np.ndarray
    warnings: tuple = ()

    @property
    def horizon(self) -> int:
        return len(self.thresholds)

    def size_of_alpha(self, alpha: float) -> int:
        """Metaorder size for signal alpha; right-continuous step function of |alpha|.

        Returns horizon + 1 for signals beyond the last mapped threshold.
        """
        return int(np.searchsorted(self.thresholds, abs(alpha), side="right")) + 1

    def alpha_of_size(self, n):
        """Smooth monotone interpolation of n -> cond_mean (log-log linear)."""
        sizes = np.arange(1, self.horizon + 1, dtype=float)
        positive = self.cond_mean > 0
        if not np.all(positive):
            raise DomainError("log-log interpolation needs positive conditional means")
        return np.exp(np.interp(np.log(n), np.log(sizes), np.log(self.cond_mean)))


def build_map(density: InformationDensity, dist: SizeDistribution, horizon: int) -> InformationMap:
    """Assign signal bins to sizes 1..horizon by cumulative-probability matching."""
    horizon = int(horizon)
    if horizon < 1:
        raise DomainError(f"horizon must be >= 1, got {horizon}")
    if dist.bounded and horizon > dist.support_max:
        raise DomainError(f"horizon {horizon} exceeds support maximum {dist.support_max}")
    n = np.arange(1, horizon + 1)
    total = dist.survival(1)
    # cumulative mass sum_{k<=n} p_k = 1 - S(n+1)/S(1), from the tail for accuracy
    cum = 1.0 - dist.survival(n + 1) / total
    notes = []
    full = dist.bounded and horizon == dist.support_max
    if full:
        cum[-1] = 1.0
    capped = np.flatnonzero(cum[:-1] >= _MASS_CAP) if full else np.flatnonzero(cum >= _MASS_CAP)
    if capped.size:
        keep = int(capped[0]) + 1
        notes.append(
            f"cumulative mass reaches {cum[keep - 1]!r} at n={keep}; map truncated from horizon {horizon}"
        )
        cum = cum[:keep]
        cum[-1] = min(cum[-1], 1.0)
    thresholds = np.array([density.quantile(float(u)) for u in cum])
    edges = np.concatenate(([density.lower], thresholds))
    masses = np.array([density.mass(a, b) for a, b in zip(edges[:-1], edges[1:])])
    if np.any(masses <= 0):
        bad = int(np.argmax(masses <= 0)) + 1
        raise DomainError(f"bin {bad} carries no signal mass")
    means = np.array([density.partial_mean(a, b) for a, b in zip(edges[:-1], edges[1:])]) / masses
    for arr in (thresholds, means, masses):
        arr.setflags(write=False)
    return InformationMap(float(density.lower), thresholds, means, masses, tuple(notes))


def continuum_density_from_sizes(
    dist: SizeDistribution,
    alpha_of_N: Callable,
    n_range: tuple[float, float] = (1.0, 1e6),
    dalpha_dN: Callable | None = None,
) -> Callable[[float], float]:
    """Signal density implied by conservation of probability, p(alpha) = p_N dN/dalpha.

    ``alpha_of_N`` must be strictly increasing on ``n_range``; it is inverted
    numerically. The derivative is taken by central differences unless
    ``dalpha_dN`` is given.
    """
    lo, hi = float(n_range[0]), float(n_range[1])
    grid = np.geomspace(lo, hi, 512)
    vals = np.array([float(alpha_of_N(g)) for g in grid])
    if np.any(np.diff(vals) <= 0):
        raise DomainError("alpha_of_N must be strictly increasing over the size range")

    def derivative(n):
        if dalpha_dN is not None:
            return float(dalpha_dN(n))
        h = 1e-5 * n
        a, b = max(lo, n - h), min(hi, n + h)
        return (float(alpha_of_N(b)) - float(alpha_of_N(a))) / (b - a)

    def inverse(alpha):
        if not vals[0] <= alpha <= vals[-1]:
            raise DomainError(f"alpha={alpha!r} outside the mapped range [{vals[0]}, {vals[-1]}]")
        return optimize.brentq(lambda n: float(alpha_of_N(n)) - alpha, lo, hi, xtol=1e-12 * hi, rtol=1e-14)

    def density(alpha):
        n = inverse(abs(alpha))
        return float(dist.density(n)) / derivative(n)

    return density


@dataclass(frozen=True)
class ScaleCalibration:
    R0: float
    Rtilde1: float


def calibrate_scale(info: InformationMap, dist: SizeDistribution) -> ScaleCalibration:
    """Fix R0 and Rtilde1 from the first two bin means.

    Solves I_1 = R0 - (1-p_1)/p_1 Rtilde1 = abar_1 and I_2 = R0 + Rtilde1/2 = abar_2,
    the permanent impacts of sizes one and two in the solved schedule.
    """
    if info.horizon < 2:
        raise CalibrationError("calibration needs at least two bins")
    p1 = dist.pmf(1) / dist.survival(1)
    if not 0 < p1 < 1:
        raise CalibrationError(f"calibration needs 0 < p_1 < 1, got {p1!r}")
    a1, a2 = float(info.cond_mean[0]), float(info.cond_mean[1])
    A = np.array([[1.0, -(1.0 - p1) / p1], [1.0, 0.5]])
    rhs = np.array([a1, a2])
    det = float(np.linalg.det(A))
    diag = {"p1": p1, "abar1": a1, "abar2": a2, "det": det}
    if abs(det) < 1e-14:
        raise CalibrationError("calibration system is singular", diag)
    R0, Rtilde1 = np.linalg.solve(A, rhs)
    diag.update(R0=float(R0), Rtilde1=float(Rtilde1))
    if not (math.isfinite(Rtilde1) and Rtilde1 > 0):
        raise CalibrationError(f"calibration gives non-positive Rtilde1={Rtilde1!r}", diag)
    if not R0 > 0:
        raise CalibrationError(f"calibration gives non-positive R0={R0!r}", diag)
    return ScaleCalibration(float(R0), float(Rtilde1))
