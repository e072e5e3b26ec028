"""Command-line interface: ``fouest <subcommand> [options]``.

Every output file starts with ``#`` comment lines that record the resolved
options (including the seed), so re-running with those options reproduces
the file byte for byte.

Exit codes: 0 success, 2 invalid input, 3 numerical failure or
non-convergence, 4 I/O error.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from ._csvio import write_table
from .asymptotics import (
    SIGMA_FORMS,
    Axis,
    ScanGrid,
    det_scan,
    estimator_covariance,
    sigma_matrix,
    sigma_matrix_ou,
)
from .errors import FouError, ValidationError
from .estimator import REPORT_FIELDS, SolverConfig, estimate
from .fou import SCHEMES, ModelParams, ObservationSeries, SimulationPlan, simulate_fou
from .moments import compute_moments, required_length
from .study import StudySpec, mc_study

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

OUTPUT_DIR_ENV = "FOUEST_OUTPUT_DIR"

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- parsing


def _add_model(p: argparse.ArgumentParser, required: bool = True) -> None:
    p.add_argument("--theta", type=float, required=required, help="mean-reversion rate theta > 0")
    p.add_argument("--hurst", type=float, required=required, help="Hurst index in (0, 1)")
    p.add_argument("--sigma", type=float, required=required, help="noise amplitude sigma > 0")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat key=value file; command-line flags take precedence")
    p.add_argument("--out", help=f"output path (default: under ${OUTPUT_DIR_ENV} or the working directory)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fouest", description="Simulate and estimate fractional OU processes.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="simulate an observation series and write t,x CSV")
    _add_model(p)
    p.add_argument("--h", type=float, default=0.5, help="observation lag")
    p.add_argument("--n", type=int, required=True,
                   help="number of observations, or of moment summands with --for-estimation")
    p.add_argument("--for-estimation", action="store_true",
                   help="write the 2n+3 observations X_0..X_{(2n+2)h} needed by `estimate --n N`")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--replication", type=int, default=0, help="replication stream index")
    p.add_argument("--scheme", choices=SCHEMES, default="stationary_exact")
    p.add_argument("--substeps", type=int, default=32, help="Euler substeps per lag (euler_fine_grid)")
    _common(p)

    p = sub.add_parser("estimate", help="estimate (theta, H, sigma) from a t,x CSV")
    p.add_argument("input", help="observation CSV with header t,x")
    p.add_argument("--n", type=int, default=None, help="moment summands (default: largest n the series supports)")
    p.add_argument("--h", type=float, default=None, help="lag; must match the time column if given")
    p.add_argument("--tol", type=float, default=1e-10, help="relative residual tolerance")
    p.add_argument("--max-iter", type=int, default=60)
    _common(p)

    p = sub.add_parser("mc-study", help="Monte-Carlo study: replicated simulate -> estimate")
    _add_model(p)
    p.add_argument("--h", type=float, default=0.5)
    p.add_argument("--n", type=int, default=2**12, help="moment summands per replication")
    p.add_argument("--reps", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scheme", choices=SCHEMES, default="stationary_exact")
    p.add_argument("--substeps", type=int, default=32)
    p.add_argument("--tol", type=float, default=1e-10, help="relative residual tolerance")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--normalized-errors", action="store_true",
                   help="also write sqrt(n)(estimate - truth) per replication")
    _common(p)

    p = sub.add_parser("det-scan", help="Jacobian determinant over a two-parameter grid")
    p.add_argument("--p1", required=True, help="first axis as name:lo:hi:count[:log]")
    p.add_argument("--p2", required=True, help="second axis as name:lo:hi:count[:log]")
    _add_model(p, required=False)
    p.add_argument("--h", type=float, default=0.5)
    p.add_argument("--workers", type=int, default=1)
    _common(p)

    p = sub.add_parser("asymptotics", help="moment CLT covariance and delta-method estimator covariance")
    _add_model(p)
    p.add_argument("--h", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=None, help="absolute accuracy of the Sigma entries")
    p.add_argument("--form", choices=SIGMA_FORMS, default="exact")
    _common(p)
    return parser


def read_config(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out: dict[str, str] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from None
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise CliError(f"{path}:{lineno}: expected key=value, got {raw!r}", EXIT_VALIDATION)
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _subparser(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._subparsers._group_actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise KeyError(command)


def _apply_config(parser: argparse.ArgumentParser, command: str, cfg: dict[str, str]) -> None:
    sp = _subparser(parser, command)
    known = {a.dest: a for a in sp._actions if a.dest not in ("help", "config")}
    defaults = {}
    for key, value in cfg.items():
        action = known.get(key)
        if action is None:
            raise CliError(f"unknown config key {key!r} for {command}", EXIT_VALIDATION)
        if isinstance(action, argparse._StoreTrueAction):
            low = value.lower()
            if low not in _BOOL_TRUE | _BOOL_FALSE:
                raise CliError(f"config key {key!r} expects a boolean, got {value!r}", EXIT_VALIDATION)
            defaults[key] = low in _BOOL_TRUE
        else:
            # string defaults go through the argument's type converter
            defaults[key] = value
            action.required = False
    sp.set_defaults(**defaults)


def _prescan(argv: list[str]) -> tuple[str | None, str | None]:
    """Subcommand and --config value, found before full parsing so that a
    config file can satisfy otherwise required flags."""
    command = next((a for a in argv if a in COMMANDS), None)
    config = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            config = argv[i + 1]
        elif a.startswith("--config="):
            config = a.split("=", 1)[1]
    return command, config


def parse_args(argv=None) -> argparse.Namespace:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    command, config = _prescan(argv)
    if command and config:
        _apply_config(parser, command, read_config(config))
    return parser.parse_args(argv)


# ---------------------------------------------------------------- helpers


def _header(ns: argparse.Namespace) -> list[str]:
    lines = [f"fouest {__version__} {ns.command}"]
    for key in sorted(vars(ns)):
        if key in ("command", "config", "out"):
            continue
        value = getattr(ns, key)
        if value is None:
            continue
        lines.append(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    return lines


def _out_path(ns: argparse.Namespace, default_name: str) -> Path:
    if ns.out:
        return Path(ns.out)
    base = os.environ.get(OUTPUT_DIR_ENV)
    return Path(base) / default_name if base else Path(default_name)


def _ensure_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {path}: {exc}", EXIT_IO) from None
    return path


def _params(ns: argparse.Namespace) -> ModelParams:
    for name in ("theta", "hurst", "sigma"):
        if getattr(ns, name) is None:
            raise ValidationError(f"--{name} is required")
    return ModelParams(ns.theta, ns.hurst, ns.sigma)


def _fmt(v: float) -> str:
    return f"{v:.10g}"


# ---------------------------------------------------------------- commands


def cmd_simulate(ns: argparse.Namespace) -> int:
    params = _params(ns)
    if ns.n is None or ns.n < 1:
        raise ValidationError(f"--n must be a positive integer, got {ns.n!r}")
    n_obs = required_length(ns.n) if ns.for_estimation else ns.n
    plan = SimulationPlan(n_obs, ns.h, ns.substeps, ns.seed, ns.scheme, ns.replication)
    series = simulate_fou(params, plan)
    out = _out_path(ns, "path.csv")
    series.to_csv(out, _header(ns))
    print(f"wrote {len(series)} observations to {out} (seed {ns.seed}, replication {ns.replication})")
    return EXIT_OK


def cmd_estimate(ns: argparse.Namespace) -> int:
    try:
        series = ObservationSeries.read_csv(ns.input)
    except OSError as exc:
        raise CliError(f"cannot read {ns.input}: {exc}", EXIT_IO) from None
    if ns.h is not None and not math.isclose(ns.h, series.h, rel_tol=1e-9):
        raise ValidationError(f"--h {ns.h} does not match the series spacing {series.h}")
    n = ns.n if ns.n is not None else (len(series) - 3) // 2
    if n < 1:
        raise ValidationError(f"series of {len(series)} rows supports no summand (need 2n+3 >= 5 rows)")
    moments = compute_moments(series, n)
    config = SolverConfig(max_iter=ns.max_iter, tol_residual=ns.tol)
    report = estimate(moments, series.h, config)
    ns.n, ns.h = n, series.h
    row = report.row()
    out = _out_path(ns, "estimate.csv")
    write_table(out, REPORT_FIELDS, [[row[k] for k in REPORT_FIELDS]],
                _header(ns) + [f"input={ns.input}", f"moments={moments.eta0!r},{moments.eta1!r},{moments.eta2!r}"])
    p = report.params
    print(f"theta={_fmt(p.theta)} hurst={_fmt(p.hurst)} sigma={_fmt(p.sigma)} "
          f"iterations={report.iterations} residual={report.residual_norm:.3e} "
          f"converged={report.converged} detJ={report.jacobian_det_at_solution:.6g}")
    if not report.converged:
        print(f"estimation did not converge ({report.message}); best residual {report.residual_norm:.3e}",
              file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_mc_study(ns: argparse.Namespace) -> int:
    params = _params(ns)
    spec = StudySpec(params, ns.h, ns.n, ns.reps, ns.seed, ns.scheme, ns.substeps,
                     SolverConfig(tol_residual=ns.tol))
    summary = mc_study(spec, workers=max(1, ns.workers))
    outdir = _ensure_dir(_out_path(ns, "mc-study"))
    header = _header(ns)
    summary.write(outdir / "replications.csv", outdir / "summary.csv", header)
    if ns.normalized_errors:
        z = summary.normalized_errors()
        write_table(outdir / "normalized_errors.csv", ("theta", "hurst", "sigma"), z.tolist(), header)
    for name, truth, mean, sd, _, _ in summary.summary_rows():
        print(f"{name:6s} truth={_fmt(truth)} mean={_fmt(mean)} sd={_fmt(sd)}")
    print(f"{summary.n_ok} converged, {summary.n_failed} failed; results in {outdir}")
    return EXIT_OK


def _parse_axis(text: str) -> Axis:
    parts = text.split(":")
    if len(parts) not in (4, 5) or (len(parts) == 5 and parts[4] != "log"):
        raise ValidationError(f"axis must be name:lo:hi:count[:log], got {text!r}")
    try:
        return Axis(parts[0], float(parts[1]), float(parts[2]), int(parts[3]), len(parts) == 5)
    except ValueError as exc:
        if isinstance(exc, ValidationError):
            raise
        raise ValidationError(f"malformed axis {text!r}: {exc}") from None


def cmd_det_scan(ns: argparse.Namespace) -> int:
    a1, a2 = _parse_axis(ns.p1), _parse_axis(ns.p2)
    if a1.name == a2.name:
        raise ValidationError("the two scan axes must be different parameters")
    fixed_name = next(n for n in ("theta", "hurst", "sigma") if n not in (a1.name, a2.name))
    fixed = getattr(ns, fixed_name)
    if fixed is None:
        raise ValidationError(f"--{fixed_name} is required for the fixed parameter")
    result = det_scan(ScanGrid(a1, a2, fixed, ns.h), workers=max(1, ns.workers))
    out = _out_path(ns, "det_scan.csv")
    result.to_csv(out, _header(ns))
    dets = np.array([r[2] for r in result.rows])
    ok = np.isfinite(dets)
    print(f"{len(result.rows)} points, {int(np.sum(dets[ok] > 0))} positive, "
          f"{int(np.sum(dets[ok] < 0))} negative, {len(result.failures)} failed; wrote {out}")
    return EXIT_OK


def cmd_asymptotics(ns: argparse.Namespace) -> int:
    params = _params(ns)
    outdir = _ensure_dir(_out_path(ns, "asymptotics"))
    header = _header(ns)
    S = sigma_matrix(params, ns.h, ns.tol, ns.form)
    S.to_csv(outdir / "sigma.csv", header + list(S.flags))
    print("Sigma (moment CLT covariance):")
    print(np.array2string(S.as_array(), precision=10))
    for flag in S.flags:
        print(f"note: {flag}")
    if params.hurst == 0.5:
        C = sigma_matrix_ou(params, ns.h, ns.form)
        C.to_csv(outdir / "sigma_closed_form.csv", header)
        print("geometric-series closed form:")
        print(np.array2string(C.as_array(), precision=10))
        print(f"max |quadrature - closed form| = {np.max(np.abs(S.as_array() - C.as_array())):.3e}")
    V = estimator_covariance(params, ns.h, ns.tol, ns.form)
    V.to_csv(outdir / "estimator_covariance.csv", header)
    print("estimator covariance J^-1 Sigma J^-T:")
    print(np.array2string(V.as_array(), precision=10))
    print(f"wrote {outdir}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate": cmd_estimate,
    "mc-study": cmd_mc_study,
    "det-scan": cmd_det_scan,
    "asymptotics": cmd_asymptotics,
}


def main(argv=None) -> int:
    try:
        ns = parse_args(argv)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except SystemExit as exc:  # argparse usage errors and --help/--version
        return int(exc.code or 0)
    try:
        return COMMANDS[ns.command](ns)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except FouError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


def run() -> None:
    sys.exit(main())
