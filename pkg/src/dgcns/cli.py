"""Command-line front end: convergence studies, timed runs, and mass checks.

Subcommands
    convergence   refine in space, write errors.csv and rates.csv
    temporal      refine in time with the mesh coupled to the step size
    run           single simulation with VTK snapshots and a mass series
    mass-check    run without snapshots and verdict on mass conservation

Options may come from --config files (key=value lines, # comments);
explicit flags win over file values.  Exit codes: 0 success, 2 bad
configuration, 3 solver failure, 4 non-convergent Picard iteration.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import multiprocessing
import os
import sys
import time

from . import analysis, forms, problems, stepper, vtkio
from .fespace import total_integral
from .mesh import build_rect_mesh
from .problems import UnknownCaseError
from .sparse import SolverError
from .stepper import PicardError

log = logging.getLogger("dgcns")

MASS_TOL = 1e-9


class ConfigError(Exception):
    """Unusable option value or option combination."""


# ---------------------------------------------------------------------------
# option plumbing

_DEFAULTS = {
    "case": None,
    "degree": "1",
    "levels": None,
    "dt": None,
    "dt_policy": None,
    "tfinal": "1.0",
    "sigma": None,
    "out": "out",
    "snap_every": None,
    "solver": "direct",
}


@dataclasses.dataclass
class Options:
    command: str
    case: str
    degree: int
    levels: list | None
    dt: str | None            # parsed per command: scalar or comma list
    dt_policy: str | None
    tfinal: float
    sigma: float | None
    out: str
    snap_every: int | None
    solver: str


def read_config(path: str) -> dict:
    """key=value per line, # starts a comment, keys match the long flags."""
    out = {}
    try:
        with open(path, encoding="ascii") as fh:
            lines = fh.readlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for num, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{num}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        key = key.strip().replace("-", "_")
        if key not in _DEFAULTS:
            raise ConfigError(f"{path}:{num}: unknown key {key!r}")
        out[key] = value.strip()
    return out


def _levels_list(text: str) -> list:
    try:
        levels = [int(part) for part in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"levels must be comma-separated integers: {text!r}") from exc
    if not levels:
        raise ConfigError("levels must be nonempty")
    if any(n <= 0 for n in levels):
        raise ConfigError("levels must be positive")
    if any(b <= a for a, b in zip(levels, levels[1:])):
        raise ConfigError("levels must be strictly increasing")
    return levels


def _float_opt(name: str, text: str) -> float:
    try:
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"{name} must be a number: {text!r}") from exc


def resolve_options(args: argparse.Namespace) -> Options:
    merged = dict(_DEFAULTS)
    if args.config:
        merged.update(read_config(args.config))
    for key in _DEFAULTS:
        flag = getattr(args, key, None)
        if flag is not None:
            merged[key] = flag
    if merged["case"] is None:
        raise ConfigError("no case selected (use --case)")
    degree = int(_float_opt("degree", merged["degree"]))
    if degree not in (1, 2, 3):
        raise ConfigError(f"degree must be 1, 2 or 3, got {degree}")
    tfinal = _float_opt("tfinal", merged["tfinal"])
    if tfinal < 0.0:
        raise ConfigError("tfinal must be nonnegative")
    sigma = None if merged["sigma"] is None else _float_opt("sigma", merged["sigma"])
    snap = merged["snap_every"]
    if snap is not None:
        snap = int(_float_opt("snap_every", snap))
        if snap <= 0:
            raise ConfigError("snap-every must be positive")
    levels = None if merged["levels"] is None else _levels_list(str(merged["levels"]))
    solver = str(merged["solver"])
    if solver not in ("direct", "gmres"):
        raise ConfigError(f"unknown solver {solver!r}")
    return Options(
        command=args.command, case=str(merged["case"]), degree=degree,
        levels=levels, dt=merged["dt"], dt_policy=merged["dt_policy"],
        tfinal=tfinal, sigma=sigma, out=str(merged["out"]),
        snap_every=snap, solver=solver)


def _parse_policy(opts: Options):
    """Return (exponent, prefactor) of dt = prefactor * h**exponent."""
    text = opts.dt_policy if opts.dt_policy is not None else "coupled"
    parts = text.split(":")
    if parts[0] == "fixed":
        if len(parts) > 1:
            raise ConfigError("fixed policy takes no parameters")
        return None
    if parts[0] != "coupled" or len(parts) > 3:
        raise ConfigError(f"dt-policy must be fixed or coupled[:exp[:pre]], got {text!r}")
    exponent = opts.degree + 1.0
    prefactor = None
    if len(parts) >= 2:
        exponent = _float_opt("dt-policy exponent", parts[1])
    if len(parts) == 3:
        prefactor = _float_opt("dt-policy prefactor", parts[2])
    if exponent <= 0.0 or (prefactor is not None and prefactor <= 0.0):
        raise ConfigError("dt-policy parameters must be positive")
    return exponent, prefactor


def _grid_counts(domain, level: int):
    """Cells per direction so that max(dx, dy) = 1/level on this rectangle."""
    x0, x1, y0, y1 = domain
    counts = []
    for extent in (x1 - x0, y1 - y0):
        cells = extent * level
        if abs(cells - round(cells)) > 1e-9 or round(cells) < 1:
            raise ConfigError(
                f"level {level} gives a non-integer cell count for extent {extent}")
        counts.append(round(cells))
    return counts[0], counts[1]


def _penalty(opts: Options) -> forms.PenaltyConfig:
    if opts.sigma is None:
        return forms.PenaltyConfig.for_degree(opts.degree)
    return forms.PenaltyConfig(opts.sigma, opts.sigma, opts.sigma)


def _step_count(tfinal: float, dt: float) -> int:
    n = round(tfinal / dt)
    if abs(n * dt - tfinal) > 1e-9 * max(tfinal, dt):
        log.warning("tfinal %g is not a multiple of dt %g, running %d steps to %g",
                    tfinal, dt, n, n * dt)
    return n


def _atomic_write(path: str, writer) -> None:
    tmp = path + ".tmp"
    writer(tmp)
    os.replace(tmp, path)


# ---------------------------------------------------------------------------
# single-level simulation, shared by every subcommand

def _simulate(opts: Options, level: int, dt: float, want_errors: bool,
              snap_dir=None, snap_steps=None, mass_rows=None):
    prob = problems.get_case(opts.case)
    if want_errors and prob.exact is None:
        raise ConfigError(f"case {opts.case!r} has no exact solution for error studies")
    nx, ny = _grid_counts(prob.domain, level)
    mesh = build_rect_mesh(nx, ny, prob.domain)
    cfg = stepper.SchemeConfig(dt=dt, penalty=_penalty(opts), solver=opts.solver)
    disc = stepper.Discretization(prob, mesh, opts.degree, cfg)
    state = stepper.initialize(disc)
    nsteps = _step_count(opts.tfinal, dt)
    snap_steps_done = []

    def emit(st):
        if mass_rows is not None:
            mass_rows.append((st.t, total_integral(st.rho())))
        if snap_dir is not None and st.n in snap_steps:
            path = os.path.join(snap_dir, f"snap_{len(snap_steps_done):04d}.vtk")
            vtkio.write_fields_vtk(path, st.rho(), st.c, st.u, st.p, time=st.t)
            snap_steps_done.append(st.n)

    emit(state)
    for _ in range(nsteps):
        state = stepper.advance(state, disc)
        emit(state)
    report = analysis.measure_errors(state, disc) if want_errors else None
    return report, state


def _level_task(payload):
    """Worker for one study level; returns a picklable outcome tuple."""
    opts_dict, level, dt = payload
    opts = Options(**opts_dict)
    try:
        report, _ = _simulate(opts, level, dt, want_errors=True)
    except PicardError as exc:
        return level, 4, str(exc)
    except SolverError as exc:
        return level, 3, str(exc)
    return level, 0, dataclasses.asdict(report)


def _run_levels(opts: Options, tasks):
    """Run (level, dt) tasks, possibly in parallel; keep completion order stable."""
    payloads = [(dataclasses.asdict(opts), level, dt) for level, dt in tasks]
    workers = int(os.environ.get("DGCNS_WORKERS", "1"))
    if workers > 1 and len(payloads) > 1:
        ctx = multiprocessing.get_context("spawn")
        with ctx.Pool(min(workers, len(payloads))) as pool:
            outcomes = pool.map(_level_task, payloads)
    else:
        outcomes = [_level_task(p) for p in payloads]
    return outcomes


def _study_outputs(opts: Options, outcomes, rate_abscissa: str) -> int:
    """Write errors.csv / rates.csv from level outcomes; report failures."""
    reports, status = [], 0
    for level, code, payload in outcomes:
        if code == 0:
            reports.append(analysis.ErrorReport(**payload))
        else:
            log.error("level %d failed: %s", level, payload)
            if status == 0:
                status = code
    os.makedirs(opts.out, exist_ok=True)
    epath = os.path.join(opts.out, "errors.csv")
    rpath = os.path.join(opts.out, "rates.csv")
    _atomic_write(epath, lambda p: analysis.write_errors_csv(p, reports))
    if len(reports) >= 2:
        hs = [r.h for r in reports]
        dts = [r.dt for r in reports]
        errors = {c: [r.column(c) for r in reports] for c in analysis.ERROR_COLUMNS}
        xs = hs if rate_abscissa == "h" else dts
        rates = {c: analysis.eoc(list(zip(xs, errors[c]))) for c in errors}
        table = analysis.EocTable(hs, dts, errors, rates)
    else:
        table = analysis.EocTable.from_reports(reports)
    _atomic_write(rpath, lambda p: analysis.write_rates_csv(p, table))
    for r in reports:
        print(f"h={r.h:.6e} dt={r.dt:.6e} " +
              " ".join(f"{c}={r.column(c):.6e}" for c in analysis.ERROR_COLUMNS))
    for c in analysis.ERROR_COLUMNS:
        if table.rates[c]:
            print(f"rate[{c}] vs {rate_abscissa}: " +
                  " ".join(f"{v:.3f}" for v in table.rates[c]))
    print(f"wrote {epath} and {rpath}")
    return status


def cmd_convergence(opts: Options) -> int:
    if problems.get_case(opts.case).exact is None:
        raise ConfigError(f"case {opts.case!r} has no exact solution for error studies")
    if not opts.levels:
        raise ConfigError("convergence needs --levels")
    policy = _parse_policy(opts)
    if policy is None:
        if opts.dt is None:
            raise ConfigError("fixed dt policy needs --dt")
        dts = [_float_opt("dt", opts.dt)] * len(opts.levels)
    else:
        exponent, prefactor = policy
        if prefactor is None:
            prefactor = 0.25 if opts.degree == 1 else 1.0
        dts = [prefactor * (1.0 / level) ** exponent for level in opts.levels]
    t0 = time.perf_counter()
    outcomes = _run_levels(opts, list(zip(opts.levels, dts)))
    status = _study_outputs(opts, outcomes, rate_abscissa="h")
    print(f"study wall time {time.perf_counter() - t0:.1f}s")
    return status


def cmd_temporal(opts: Options) -> int:
    if problems.get_case(opts.case).exact is None:
        raise ConfigError(f"case {opts.case!r} has no exact solution for error studies")
    if opts.dt is None:
        raise ConfigError("temporal needs --dt with a comma-separated step list")
    dts = [_float_opt("dt", part) for part in str(opts.dt).split(",")]
    if len(dts) < 2:
        raise ConfigError("temporal needs at least two dt values")
    if any(b >= a for a, b in zip(dts, dts[1:])):
        raise ConfigError("dt values must be strictly decreasing")
    policy = _parse_policy(opts)
    if policy is None:
        raise ConfigError("temporal requires a coupled dt policy")
    exponent, prefactor = policy
    if exponent != opts.degree + 1:
        log.warning("coupling exponent %g does not match degree+1=%d",
                    exponent, opts.degree + 1)
    if prefactor is None:
        prefactor = 2.0
    levels = [max(1, round((prefactor / dt) ** (1.0 / exponent))) for dt in dts]
    t0 = time.perf_counter()
    outcomes = _run_levels(opts, list(zip(levels, dts)))
    status = _study_outputs(opts, outcomes, rate_abscissa="dt")
    print(f"study wall time {time.perf_counter() - t0:.1f}s")
    return status


def _single_level(opts: Options) -> int:
    if not opts.levels or len(opts.levels) != 1:
        raise ConfigError("this command needs --levels with exactly one value")
    return opts.levels[0]


def _write_mass_csv(path, rows) -> None:
    base = rows[0][1]
    with open(path, "w", encoding="ascii") as fh:
        fh.write("t,mass,rel_deviation\n")
        for t, mass in rows:
            dev = (mass - base) / base
            fh.write(f"{t:.12e},{mass:.12e},{dev:.12e}\n")


def cmd_run(opts: Options) -> int:
    level = _single_level(opts)
    if opts.dt is None:
        raise ConfigError("run needs --dt")
    dt = _float_opt("dt", opts.dt)
    nsteps = _step_count(opts.tfinal, dt)
    if opts.snap_every is None:
        snap_steps = {0, nsteps}
    else:
        snap_steps = {0} | set(range(0, nsteps + 1, opts.snap_every))
    os.makedirs(opts.out, exist_ok=True)
    mass_rows = []
    try:
        _simulate(opts, level, dt, want_errors=False, snap_dir=opts.out,
                  snap_steps=snap_steps, mass_rows=mass_rows)
        status = 0
    except PicardError as exc:
        log.error("run failed: %s", exc)
        status = 4
    except SolverError as exc:
        log.error("run failed: %s", exc)
        status = 3
    if mass_rows:
        _atomic_write(os.path.join(opts.out, "mass.csv"),
                      lambda p: _write_mass_csv(p, mass_rows))
    print(f"wrote {len(mass_rows)} mass rows to {opts.out}")
    return status


def cmd_mass_check(opts: Options) -> int:
    level = _single_level(opts)
    if opts.dt is None:
        raise ConfigError("mass-check needs --dt")
    dt = _float_opt("dt", opts.dt)
    os.makedirs(opts.out, exist_ok=True)
    mass_rows = []
    _simulate(opts, level, dt, want_errors=False, mass_rows=mass_rows)
    _atomic_write(os.path.join(opts.out, "mass.csv"),
                  lambda p: _write_mass_csv(p, mass_rows))
    base = mass_rows[0][1]
    worst = max(abs(m - base) for _, m in mass_rows) / abs(base)
    print(f"max relative mass deviation {worst:.3e} over {len(mass_rows) - 1} steps")
    if worst > MASS_TOL:
        log.error("mass deviation exceeds %g", MASS_TOL)
        return 3
    print("mass conservation ok")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dgcns", description="chemotaxis-flow dG solver front end")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
            ("convergence", "spatial refinement study"),
            ("temporal", "time refinement study with coupled mesh"),
            ("run", "single run with snapshots and mass series"),
            ("mass-check", "mass conservation verdict")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="key=value option file")
        p.add_argument("--case", help="problem case name")
        p.add_argument("--degree", help="polynomial degree (1, 2 or 3)")
        p.add_argument("--levels", help="comma-separated inverse mesh sizes")
        p.add_argument("--dt", help="time step, or dt list for temporal")
        p.add_argument("--dt-policy", dest="dt_policy",
                       help="fixed or coupled[:exponent[:prefactor]]")
        p.add_argument("--tfinal", help="final time")
        p.add_argument("--sigma", help="penalty override for every form")
        p.add_argument("--out", help="output directory")
        p.add_argument("--snap-every", dest="snap_every",
                       help="snapshot cadence in steps")
        p.add_argument("--solver", help="direct or gmres")
    return parser


_COMMANDS = {
    "convergence": cmd_convergence,
    "temporal": cmd_temporal,
    "run": cmd_run,
    "mass-check": cmd_mass_check,
}


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    try:
        opts = resolve_options(args)
        return _COMMANDS[args.command](opts)
    except (ConfigError, UnknownCaseError, ValueError) as exc:
        log.error("%s", exc)
        return 2
    except PicardError as exc:
        log.error("%s", exc)
        return 4
    except SolverError as exc:
        log.error("%s", exc)
        return 3


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
