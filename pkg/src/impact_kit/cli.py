"""Command-line front end: ``impact``, ``simulate``, ``verify`` and ``figure``.

Exit codes are 0 on success, 2 for configuration errors, 3 for numerical
errors and 4 when a verification check fails. Errors are reported on
stderr as a single ``error=<kind> code=<n> reason=<json string>`` line.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np
from scipy import stats

from . import __version__
from .distributions import (
    SizeDistribution,
    load_tabulated,
    make_geometric,
    make_pareto,
    make_stretched_exponential,
    make_tabulated,
    make_truncated_pareto,
    tabulate,
)
from .errors import ConfigError, DomainError, IdentityViolation
from .game import SCHEMA_VERSION, GameConfig, martingale_diagnostic, max_abs_z, nash_deviation, rounding_tol, run_paths
from .impact import (
    CROSS_TOL,
    IDENTITY_TOL,
    ImpactSchedule,
    corrupt_rtilde,
    fair_pricing_residuals,
    martingale_residuals,
    partial_profit,
    profit_report,
    solve_schedule,
    solve_schedule_recursive,
)
from .information import (
    build_map,
    calibrate_scale,
    load_table_density,
    pareto_tail_density,
    uniform_density,
)

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4
COMMANDS = ("impact", "simulate", "verify", "figure")
FORMATS = ("csv", "json")
# unbounded laws are cut to finite support at this horizon, or earlier once
# the remaining tail mass drops below TAIL_CUT
DEFAULT_TRUNCATION = 100
TAIL_CUT = 1e-6
# Monte Carlo martingale check only uses steps reached by this many paths
MC_MIN_PATHS = 100


@dataclass(frozen=True)
class RunConfig:
    """Everything a command needs; ``canonical()`` is its stable serialized form."""

    command: str
    dist: str | None = None
    R0: float = 1.0
    rtilde1: float = 1.0
    density: str | None = None
    horizon: int | None = None
    output: str | None = None
    format: str | None = None
    seed: int = 0
    paths: int | None = None
    mu: float = 0.5
    K: int = 100
    null_dist: str = "geometric:q=0.5"
    eta_law: str = "gaussian"
    eta_scale: float | None = None
    S0: float = 100.0
    alpha_dispersion: float = 0.0
    workers: int = 1
    corrupt: str | None = None
    figure_id: int | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"unknown command {self.command!r}")
        if self.format is not None and self.format not in FORMATS:
            raise ConfigError(f"format must be one of {FORMATS}, got {self.format!r}")
        for name in ("horizon", "paths", "workers"):
            v = getattr(self, name)
            if v is not None and (int(v) != v or v < 1):
                raise ConfigError(f"{name} must be a positive integer, got {v!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        if "command" not in data:
            raise ConfigError("config needs a command")
        return cls(**data)

    def canonical(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


# -- option string parsing ------------------------------------------------------


def _parse_spec(text: str) -> tuple[str, dict]:
    family, _, rest = text.partition(":")
    params = {}
    for item in filter(None, rest.split(",")):
        key, eq, value = item.partition("=")
        if not eq:
            raise ConfigError(f"expected key=value in {text!r}, got {item!r}")
        params[key.strip()] = value.strip()
    return family.strip(), params


def _take(params, spec, *required, **optional):
    allowed = set(required) | set(optional)
    extra = sorted(set(params) - allowed)
    if extra:
        raise ConfigError(f"unexpected parameters {extra} in {spec!r}")
    missing = [k for k in required if k not in params]
    if missing:
        raise ConfigError(f"missing parameters {missing} in {spec!r}")
    out = dict(optional)
    out.update(params)
    return out


def _float(value, spec):
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"not a number in {spec!r}: {value!r}") from None


def parse_dist(spec: str, seed: int = 0) -> SizeDistribution:
    """Size law from ``family:key=value,...``.

    Families: pareto(beta), truncated_pareto(beta, M), stretched(lambda,
    renormalize), geometric(q), tabulated(file or weights=w1;w2;...) and
    random(M), a tabulated law with weights drawn from ``seed``.
    """
    family, params = _parse_spec(spec)
    if family == "pareto":
        p = _take(params, spec, "beta")
        return make_pareto(_float(p["beta"], spec))
    if family == "truncated_pareto":
        p = _take(params, spec, "beta", "M")
        return make_truncated_pareto(_float(p["beta"], spec), int(_float(p["M"], spec)))
    if family in ("stretched", "stretched_exponential"):
        p = _take(params, spec, "lambda", renormalize="false")
        return make_stretched_exponential(_float(p["lambda"], spec), p["renormalize"].lower() in ("1", "true", "yes"))
    if family == "geometric":
        p = _take(params, spec, "q")
        return make_geometric(_float(p["q"], spec))
    if family == "tabulated":
        if "file" in params:
            _take(params, spec, "file")
            path = Path(params["file"])
            if not path.is_file():
                raise ConfigError(f"weight file not found: {path}")
            return load_tabulated(path)
        p = _take(params, spec, "weights")
        return make_tabulated([_float(w, spec) for w in p["weights"].split(";")])
    if family == "random":
        p = _take(params, spec, M="20")
        M = int(_float(p["M"], spec))
        if M < 2:
            raise ConfigError("random law needs M >= 2")
        rng = np.random.default_rng(seed)
        return make_tabulated(rng.uniform(0.05, 1.0, M))
    raise ConfigError(f"unknown distribution family {family!r}")


def parse_density(spec: str):
    family, params = _parse_spec(spec)
    if family == "uniform":
        p = _take(params, spec, a="0", b="1")
        return uniform_density(_float(p["a"], spec), _float(p["b"], spec))
    if family == "pareto_tail":
        p = _take(params, spec, "exponent", x_min="1")
        return pareto_tail_density(_float(p["exponent"], spec), _float(p["x_min"], spec))
    if family == "table":
        p = _take(params, spec, "file")
        if not Path(p["file"]).is_file():
            raise ConfigError(f"density table not found: {p['file']}")
        return load_table_density(p["file"])
    raise ConfigError(f"unknown density family {family!r}")


def _scale(cfg: RunConfig, dist: SizeDistribution) -> tuple[float, float]:
    if cfg.density is None:
        return cfg.R0, cfg.rtilde1
    density = parse_density(cfg.density)
    horizon = cfg.horizon or (dist.support_max if dist.bounded else DEFAULT_TRUNCATION)
    cal = calibrate_scale(build_map(density, dist, horizon), dist)
    return cal.R0, cal.Rtilde1


def _finite_dist(cfg: RunConfig, spec: str) -> SizeDistribution:
    dist = parse_dist(spec, cfg.seed)
    if dist.bounded:
        return dist
    H = cfg.horizon
    if H is None:
        tail = dist.survival(np.arange(2, DEFAULT_TRUNCATION + 2)) / dist.survival(1)
        H = min(DEFAULT_TRUNCATION, int(np.argmax(tail < TAIL_CUT)) + 1 if np.any(tail < TAIL_CUT) else DEFAULT_TRUNCATION)
        H = max(H, 2)
    return tabulate(dist, H)


def _apply_corruption(cfg: RunConfig, schedule: ImpactSchedule) -> ImpactSchedule:
    if cfg.corrupt is None:
        return schedule
    parts = cfg.corrupt.split(":")
    if len(parts) != 3 or parts[0] != "rtilde" or not parts[2].startswith("x"):
        raise ConfigError(f"corruption must look like rtilde:<t>:x<factor>, got {cfg.corrupt!r}")
    try:
        t, factor = int(parts[1]), float(parts[2][1:])
    except ValueError:
        raise ConfigError(f"bad corruption spec {cfg.corrupt!r}") from None
    return corrupt_rtilde(schedule, t, factor)


# -- output -------------------------------------------------------------------


def _json_value(x):
    if isinstance(x, dict):
        return {k: _json_value(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_value(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def dump_json(payload: dict) -> str:
    return json.dumps(_json_value(payload), sort_keys=True, indent=2) + "\n"


def _rows_to_csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_csv_field(v) for v in row])
    return buf.getvalue()


def _csv_field(v):
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return "" if math.isnan(v) else repr(v)
    return v


def _emit(cfg: RunConfig, text: str, out) -> None:
    if cfg.output:
        Path(cfg.output).write_text(text)
    else:
        out.write(text)


# -- commands -----------------------------------------------------------------


def cmd_impact(cfg: RunConfig, out) -> int:
    if cfg.dist is None:
        raise ConfigError("impact needs --dist")
    dist = parse_dist(cfg.dist, cfg.seed)
    if not dist.bounded and cfg.horizon is None:
        raise ConfigError("unbounded distributions need --horizon")
    R0, rtilde1 = _scale(cfg, dist)
    schedule = _apply_corruption(cfg, solve_schedule(dist, R0, rtilde1, cfg.horizon))
    if (cfg.format or "csv") == "csv":
        _emit(cfg, schedule.to_csv(), out)
        return EXIT_OK
    pi = schedule.pi
    rows = [
        {
            "t": i + 1,
            "p": schedule.p[i],
            "P_cont": schedule.cont[i],
            "Rtilde": schedule.rtilde[i],
            "R": schedule.rrev[i],
            "I_immediate": schedule.immediate[i],
            "I_permanent": schedule.permanent[i],
            "pi": pi[i],
        }
        for i in range(schedule.horizon)
    ]
    payload = {"schema_version": SCHEMA_VERSION, "dist": dist.describe(), "R0": R0, "Rtilde1": rtilde1, "rows": rows}
    _emit(cfg, dump_json(payload), out)
    return EXIT_OK


def _game_config(cfg: RunConfig, dist, schedule, paths) -> GameConfig:
    return GameConfig(
        dist=dist,
        schedule=schedule,
        mu=cfg.mu,
        K=cfg.K,
        null_dist=parse_dist(cfg.null_dist, cfg.seed),
        eta_law=cfg.eta_law,
        eta_scale=cfg.eta_scale,
        S0=cfg.S0,
        n_paths=paths,
        seed=cfg.seed,
        alpha_dispersion=cfg.alpha_dispersion,
    )


def cmd_simulate(cfg: RunConfig, out) -> int:
    if cfg.dist is None:
        raise ConfigError("simulate needs --dist")
    dist = _finite_dist(cfg, cfg.dist)
    R0, rtilde1 = _scale(cfg, dist)
    schedule = _apply_corruption(cfg, solve_schedule(dist, R0, rtilde1))
    outcome = run_paths(_game_config(cfg, dist, schedule, cfg.paths or 10000), workers=cfg.workers)
    _emit(cfg, outcome.to_json(), out)
    return EXIT_OK


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    observed: float
    threshold: float

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name} observed={self.observed:.3e} threshold={self.threshold:.3e}"


def run_checks(cfg: RunConfig, dist: SizeDistribution) -> list[Check]:
    """Identity suite on one finite distribution, plus a Monte Carlo martingale check."""
    R0, rtilde1 = _scale(cfg, dist)
    clean = solve_schedule(dist, R0, rtilde1)
    schedule = _apply_corruption(cfg, clean)
    scale = schedule.scale()
    M = dist.support_max
    checks = []

    rec = solve_schedule_recursive(dist, R0, rtilde1)
    both = np.isfinite(clean.rtilde)
    gap = np.max(np.abs(clean.immediate - rec.immediate)) / scale
    gap = max(gap, float(np.max(np.abs(clean.rtilde[both] - rec.rtilde[both]))) / scale)
    checks.append(Check("closed_form_vs_recursion", gap < CROSS_TOL, gap, CROSS_TOL))

    mart = float(np.max(np.abs(martingale_residuals(schedule)), initial=0.0)) / scale
    checks.append(Check("martingale_identity", mart < IDENTITY_TOL, mart, IDENTITY_TOL))

    fair = float(np.max(np.abs(fair_pricing_residuals(schedule)), initial=0.0)) / scale
    checks.append(Check("fair_pricing", fair < IDENTITY_TOL, fair, IDENTITY_TOL))

    try:
        report = profit_report(schedule, dist)
        overall = abs(report.overall) / scale
        checks.append(Check("overall_profit_zero", overall < CROSS_TOL, overall, CROSS_TOL))
    except IdentityViolation:
        report = None
        checks.append(Check("overall_profit_zero", False, math.inf, CROSS_TOL))

    worst = 0.0
    try:
        for nbar in range(1, M):
            partial_profit(report, schedule, dist, nbar)
    except IdentityViolation:
        worst = math.inf
    checks.append(Check("partial_sum_identity", worst == 0.0, worst, IDENTITY_TOL))

    pi = schedule.pi
    p = schedule.p
    balance = abs(p[0] * pi[0] + M * p[-1] * pi[-1]) / scale
    ok = pi[0] > 0 and pi[-1] < 0 and balance < IDENTITY_TOL
    checks.append(Check("endpoint_profits", ok, balance, IDENTITY_TOL))

    game = _game_config(cfg, dist, schedule, cfg.paths or 20000)
    worst_nash = max((nash_deviation(game, N, d) for N in range(2, M) for d in (-1, 1)), default=-math.inf)
    tol = IDENTITY_TOL * scale
    checks.append(Check("nash_no_deviation", worst_nash <= tol, worst_nash, tol))

    records = martingale_diagnostic(run_paths(game, workers=cfg.workers))
    tested = [r for r in records if r.n >= MC_MIN_PATHS]
    z = max_abs_z(tested, rounding_tol(game))
    # family-wise level 1e-3 across the tested steps
    zcrit = float(stats.norm.isf(1e-3 / (2 * max(len(tested), 1))))
    checks.append(Check("martingale_monte_carlo", z < zcrit, z, zcrit))
    return checks


def cmd_verify(cfg: RunConfig, out) -> int:
    dist = _finite_dist(cfg, cfg.dist or "random:M=20")
    checks = run_checks(cfg, dist)
    text = f"dist {dist.describe()}\n" + "".join(c.line() + "\n" for c in checks)
    _emit(cfg, text, out)
    return EXIT_OK if all(c.passed for c in checks) else EXIT_VERIFY


def figure_rows(fig_id: int) -> tuple[tuple, list]:
    """Plot-ready rows for figure 2 (impact and reversion) or figure 3 (truncated Pareto)."""
    header = ("series", "beta", "t", "I_immediate", "I_permanent", "P_cont")
    rows = []
    if fig_id == 2:
        for beta in (1.0, 1.5, 2.0, 2.5):
            s = solve_schedule(make_pareto(beta), horizon=1000)
            for i in range(s.horizon):
                rows.append(("impact", beta, i + 1, s.immediate[i], s.permanent[i], s.cont[i]))
        s = solve_schedule(make_pareto(1.5), horizon=21)
        N = 20
        for t in range(1, N + 2):
            price = s.immediate[t - 1] if t <= N else s.permanent[N - 1]
            rows.append(("reversion", 1.5, t, price, s.permanent[N - 1], s.cont[min(t, N) - 1]))
        return header, rows
    if fig_id == 3:
        for beta in (1.5, 2.0, 2.5):
            s = solve_schedule(make_truncated_pareto(beta, 1000))
            for i in range(s.horizon):
                rows.append(("truncated", beta, i + 1, s.immediate[i], s.permanent[i], s.cont[i]))
        return header, rows
    raise ConfigError(f"unknown figure id {fig_id!r}; choose 2 or 3")


def cmd_figure(cfg: RunConfig, out) -> int:
    if cfg.figure_id is None:
        raise ConfigError("figure needs --id")
    header, rows = figure_rows(cfg.figure_id)
    if (cfg.format or "csv") == "csv":
        _emit(cfg, _rows_to_csv(header, rows), out)
    else:
        payload = {"schema_version": SCHEMA_VERSION, "figure": cfg.figure_id, "rows": [dict(zip(header, r)) for r in rows]}
        _emit(cfg, dump_json(payload), out)
    return EXIT_OK


HANDLERS = {"impact": cmd_impact, "simulate": cmd_simulate, "verify": cmd_verify, "figure": cmd_figure}


# -- argument parsing ---------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="impact-kit", description="Equilibrium market impact of metaorders.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    S = argparse.SUPPRESS

    def common(p):
        p.add_argument("--config", default=S, help="JSON file with RunConfig keys; flags override it")
        p.add_argument("--output", "-o", default=S)
        p.add_argument("--seed", type=int, default=S)

    def model(p):
        p.add_argument("--dist", default=S, help="e.g. pareto:beta=1.5 or tabulated:file=w.txt")
        p.add_argument("--horizon", type=int, default=S)
        p.add_argument("--r0", dest="R0", type=float, default=S)
        p.add_argument("--rtilde1", type=float, default=S)
        p.add_argument("--density", default=S, help="calibrate the scale, e.g. uniform:a=0,b=1")
        p.add_argument("--corrupt", default=S, help="negative control, e.g. rtilde:2:x2")

    def game(p):
        p.add_argument("--paths", type=int, default=S)
        p.add_argument("--mu", type=float, default=S)
        p.add_argument("-K", "--traders", dest="K", type=int, default=S)
        p.add_argument("--null-dist", dest="null_dist", default=S)
        p.add_argument("--eta-law", dest="eta_law", default=S)
        p.add_argument("--eta-scale", dest="eta_scale", type=float, default=S)
        p.add_argument("--s0", dest="S0", type=float, default=S)
        p.add_argument("--alpha-dispersion", dest="alpha_dispersion", type=float, default=S)
        p.add_argument("--workers", type=int, default=S)

    p = sub.add_parser("impact", help="solve and export the impact schedule")
    common(p)
    model(p)
    p.add_argument("--format", choices=FORMATS, default=S)

    p = sub.add_parser("simulate", help="Monte Carlo run of the trading game")
    common(p)
    model(p)
    game(p)

    p = sub.add_parser("verify", help="run the identity suite")
    common(p)
    model(p)
    game(p)

    p = sub.add_parser("figure", help="emit figure data")
    common(p)
    p.add_argument("--id", dest="figure_id", type=int, default=S)
    p.add_argument("--format", choices=FORMATS, default=S)
    return parser


def load_config(argv) -> RunConfig:
    args = vars(build_parser().parse_args(argv))
    data = {}
    path = args.pop("config", None)
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config file must hold a JSON object")
        if data.get("command", args["command"]) != args["command"]:
            raise ConfigError(f"config is for {data['command']!r}, not {args['command']!r}")
    data.update(args)
    return RunConfig.from_dict(data)


def _fail(kind, code, exc, err) -> int:
    err.write(f"error={kind} code={code} reason={json.dumps(str(exc))}\n")
    return code


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    try:
        cfg = load_config(argv)
        return HANDLERS[cfg.command](cfg, out)
    except (ConfigError, DomainError, TypeError) as exc:
        return _fail("config", EXIT_CONFIG, exc, err)
    except (ArithmeticError, np.linalg.LinAlgError) as exc:
        return _fail("numerical", EXIT_NUMERIC, exc, err)
    except BrokenPipeError:
        # reader went away (e.g. piped into head); silence the flush at exit
        if out is sys.stdout:
            os.dup2(os.open(os.devnull, os.O_WRONLY), sys.stdout.fileno())
        return 0


if __name__ == "__main__":
    sys.exit(main())
