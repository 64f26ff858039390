"""Command-line entry point: ``singflow <subcommand> [options]``.

Exit codes: 0 when the run (or check) passes, 2 when a check fails, 1 on
usage, configuration or domain errors.  JSON outputs carry ``schema_version``
and a ``timestamp``; see FORMATS.md for every schema.
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import math
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import fields as F
from ._json import SCHEMA_VERSION, dumps
from .errors import NoContractionError, NoReturnError, RefineError, SingflowError

EXIT_OK, EXIT_ERROR, EXIT_FAIL = 0, 1, 2

DEFAULT_STARTS = {"lorenz": [1.0, 1.0, 1.0], "vanderpol": [2.0, 0.0], "hopf": [0.9, 0.0],
                  "linear": [1.0, 0.05]}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _vector(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma separated numbers, got {text!r}") from None


def _floats(text: str) -> list[float]:
    return _vector(text)


def load_spec(ref: str) -> F.VectorFieldSpec:
    """A field config path, or the name of a builtin field with default parameters."""
    if ref in F.BUILTIN_KINDS and not Path(ref).exists():
        if ref == "linear":
            return F.linear_field(np.diag([-1.0, 2.0]))
        return F.from_config({"kind": ref, "dim": 3 if ref == "lorenz" else 2})
    try:
        return F.load_field(ref)
    except FileNotFoundError:
        raise UsageError(f"field config {ref!r} not found") from None
    except json.JSONDecodeError as exc:
        raise UsageError(f"field config {ref!r} is not valid JSON ({exc}); see FORMATS.md") from None
    except (ValueError, TypeError, KeyError) as exc:
        raise UsageError(f"invalid field config {ref!r}: {exc}") from None


def _start(spec, args) -> np.ndarray:
    if args.x is not None:
        x = np.asarray(args.x, dtype=float)
    elif spec.kind in DEFAULT_STARTS:
        x = np.asarray(DEFAULT_STARTS[spec.kind])
    else:
        raise UsageError("--x is required for this field")
    if x.size != spec.dim:
        raise UsageError(f"--x has {x.size} entries, the field has dimension {spec.dim}")
    return x


def _envelope(command: str, params: dict, result, passed: bool) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "params": params,
        "passed": passed,
        "result": result,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    }


def _emit(text: str, out: Optional[str]):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])
    return buf.getvalue()


# --- subcommands ---------------------------------------------------------------------

def cmd_flow(args):
    from .integrate import orbit
    spec = load_spec(args.field)
    x = _start(spec, args)
    seg = orbit(spec, x, args.t)
    if args.samples:
        ts = np.linspace(*seg.span, args.samples)
        pts = seg(ts)
    else:
        ts, pts = seg.times, seg.points
    if args.format == "csv":
        header = ["t"] + [f"x{i}" for i in range(spec.dim)]
        return _csv(header, [[t, *p] for t, p in zip(ts, pts)]), True
    res = {"start": x, "t": args.t, "end": seg.points[-1] if args.t >= 0 else seg.points[0],
           "times": ts, "points": pts}
    return res, True


def cmd_poincare(args):
    from .poincare import (linear_poincare, nonlinear_poincare, normal_basis,
                           rescaled_linear_poincare, rescaled_nonlinear_poincare)
    spec = load_spec(args.field)
    x = _start(spec, args)
    X = spec._f(x)
    if args.v is not None:
        v = np.asarray(args.v, dtype=float)
        if v.size != spec.dim:
            raise UsageError(f"--v has {v.size} entries, the field has dimension {spec.dim}")
    else:
        v = args.radius * normal_basis(X)[:, 0]
    res = {"x": x, "v": v, "t": args.t, "rescaled": args.rescaled}
    if args.rescaled:
        res["linear"] = rescaled_linear_poincare(spec, x, _unit_or_zero(v), args.t).vec
        img = rescaled_nonlinear_poincare(spec, x, v, args.t)
    else:
        res["linear"] = linear_poincare(spec, x, _unit_or_zero(v), args.t).vec
        img = nonlinear_poincare(spec, x, v, args.t)
    res.update(base=img.image.base, image=img.image.vec, crossing_time=img.crossing_time,
               ratio_bound=img.ratio_bound)
    return res, True


def _unit_or_zero(v):
    n = np.linalg.norm(v)
    return v if n == 0 else v / n


def cmd_blowup_check(args):
    from .blowup import check_boundary
    spec = load_spec(args.field)
    res = check_boundary(spec, n_dirs=args.directions, seed=args.seed)
    return res, res["passed"]


def _symmetry(spec, region, rng, cfg, n):
    from .identify import identification
    from .poincare import normal_basis
    worst = 0.0
    for x in region.points:
        X = spec._f(x)
        for _ in range(n):
            y = x + rng.uniform(0, 0.3 * cfg.beta * np.linalg.norm(X)) * _unit_or_zero(rng.normal(size=x.size))
            Q = normal_basis(spec._f(y))
            u = 0.5 * cfg.beta * Q @ _unit_or_zero(rng.normal(size=Q.shape[1]))
            try:
                w = identification(spec, y, x, u, cfg).vec.vec
                back = identification(spec, x, y, w, cfg).vec.vec
            except SingflowError:
                continue
            worst = max(worst, float(np.linalg.norm(back - u)))
    return worst


def cmd_identify_check(args):
    from .acceptance import cocycle_residuals
    from .identify import (Region, check_local_injectivity, check_local_invariance,
                           check_no_small_period)
    from .poincare import DEFAULT
    spec = load_spec(args.field)
    x = _start(spec, args)
    # saddle orbits leave the domain quickly, so the linear field gets a short window
    span = args.span if args.span is not None else (1.0 if spec.kind == "linear" else 5.0)
    transient = args.transient if args.transient is not None else (0.0 if spec.kind == "linear" else 5.0)
    region = Region.orbit_sample(spec, x, span, args.points, transient=transient)
    rng = np.random.default_rng(args.seed)
    checks = [
        check_local_invariance(spec, region, seed=args.seed),
        check_local_injectivity(spec, region, args.delta, seed=args.seed, time_scale=args.time_scale),
        check_no_small_period(spec, region, args.kappa, time_scale=args.time_scale),
    ]
    sym = _symmetry(spec, region, rng, DEFAULT, 4)
    checks.append({"check": "symmetry", "max_residual": sym, "threshold": 1e-9, "passed": sym <= 1e-9})
    pts = region.points
    res_c, skipped = cocycle_residuals(spec, lambda r: pts[r.integers(len(pts))],
                                       4 * len(pts), rng, DEFAULT)
    cmax = max(res_c, default=math.inf)
    checks.append({"check": "cocycle", "max_residual": cmax, "samples": len(res_c),
                   "skipped": skipped, "threshold": 1e-9, "passed": cmax <= 1e-9})
    passed = all(c["passed"] for c in checks)
    return {"points": len(region), "checks": checks}, passed


def cmd_lyapunov(args):
    from .analyze import lyapunov_normal
    spec = load_spec(args.field)
    x = _start(spec, args)
    e = lyapunov_normal(spec, x, args.total_time, args.step)
    res = {"x": x, "total_time": args.total_time, "step": e.step, "exponents": e.exponents,
           "field_rate": e.field_rate, "block_count": e.block_count, "logdet_rate": e.logdet_rate,
           "logdet_residual": e.logdet_residual}
    if args.logs:
        Path(args.logs).write_text(_csv(["block", "log_norm"], enumerate(e.block_log_norms)))
    return res, True


def _read_logs(path: str) -> list[float]:
    try:
        text = Path(path).read_text()
    except FileNotFoundError:
        raise UsageError(f"log file {path!r} not found") from None
    rows = list(csv.reader(io.StringIO(text)))
    vals = []
    for r in rows:
        if not r or not r[-1].strip():
            continue
        try:
            vals.append(float(r[-1]))
        except ValueError:
            if vals:
                raise UsageError(f"non-numeric entry {r[-1]!r} in {path!r}") from None
            # header row
    return vals


def cmd_pliss(args):
    from .analyze import pliss_points
    if not args.lam > 0:
        raise UsageError("--lambda must be positive")
    logs = _read_logs(args.logs)
    rep = pliss_points(logs, args.lam)
    return rep.to_dict() | {"count": len(logs)}, True


def cmd_detect_periodic(args):
    from .analyze import detect_periodic
    spec = load_spec(args.field)
    x = _start(spec, args)
    try:
        res = detect_periodic(spec, x, args.horizon, args.r0, args.beta0)
    except (NoReturnError, NoContractionError, RefineError) as exc:
        return {"error": type(exc).__name__, "message": str(exc)}, False
    return res.to_dict(), True


def cmd_continuity(args):
    from .analyze import continuity_sweep
    spec = load_spec(args.field)
    r = continuity_sweep(spec, args.t, args.eps, seed=args.seed, parallelism=args.threads)
    ok = r["monotone"] and r["positive"] and r["control_max"] <= 1e-12
    if args.format == "csv":
        return _csv(["eps", "delta", "beta"], [[row["eps"], row["delta"], row["beta"]]
                                               for row in r["table"]]), ok
    if not args.pairs:
        r = {k: v for k, v in r.items() if k != "pairs"}
    return r, ok


def cmd_verify_all(args):
    from .acceptance import verify_all
    spec = load_spec(args.field) if args.field else None
    only = set(args.only) if args.only else None

    def report(r):
        print(r.line(), file=sys.stderr, flush=True)
    results = verify_all(args.seed, spec, args.threads, only=only,
                         determinism=not args.no_determinism, report=report)
    passed = all(r.ok for r in results)
    return {"seed": args.seed, "criteria": [r.to_dict() for r in results]}, passed


# --- parser --------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="singflow", description="Poincare flows, blowups and closing tools.")
    sub = p.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)

    def common(sp, field_required=True, x=False):
        sp.add_argument("--field", required=field_required,
                        help="field config JSON, or a builtin name: " + ", ".join(F.BUILTIN_KINDS))
        if x:
            sp.add_argument("--x", type=_vector, help="start point, comma separated")
        sp.add_argument("--out", help="output file (default: stdout)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--threads", type=int, default=1,
                        help="worker threads; SINGFLOW_THREADS overrides")
        return sp

    s = common(sub.add_parser("flow", help="orbit trace"), x=True)
    s.add_argument("--t", type=float, required=True)
    s.add_argument("--samples", type=int, default=0, help="resample on a uniform grid")
    s.add_argument("--format", choices=("json", "csv"), default="json")

    s = common(sub.add_parser("poincare", help="linear and nonlinear Poincare flows"), x=True)
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--v", type=_vector, help="normal vector at x")
    s.add_argument("--radius", type=float, default=0.01,
                   help="norm of the default normal vector when --v is absent")
    s.add_argument("--rescaled", action="store_true")

    s = common(sub.add_parser("blowup-check", help="boundary formula consistency checks"))
    s.add_argument("--directions", type=int, default=6)

    s = common(sub.add_parser("identify-check", help="identification compatibility checks"), x=True)
    s.add_argument("--span", type=float, help="orbit time sampled (default 5, linear 1)")
    s.add_argument("--points", type=int, default=8)
    s.add_argument("--transient", type=float, help="time discarded first (default 5, linear 0)")
    s.add_argument("--delta", type=float, default=0.05)
    s.add_argument("--kappa", type=float, default=0.5)
    s.add_argument("--time-scale", type=float, default=1.0)

    s = common(sub.add_parser("lyapunov", help="normal Lyapunov exponents"), x=True)
    s.add_argument("--total-time", type=float, default=100.0)
    s.add_argument("--step", type=float, default=0.5)
    s.add_argument("--logs", help="also write the block log-norms as CSV")

    s = sub.add_parser("pliss", help="Pliss indices of a log-norm sequence")
    s.add_argument("--lambda", dest="lam", type=float, required=True)
    s.add_argument("--logs", required=True, help="CSV whose last column holds the log-norms")
    s.add_argument("--out")
    s.add_argument("--threads", type=int, default=1)

    s = common(sub.add_parser("detect-periodic", help="closing-property periodic orbit detector"),
               x=True)
    s.add_argument("--horizon", type=float, default=60.0)
    s.add_argument("--r0", type=float, default=0.3)
    s.add_argument("--beta0", type=float, default=0.3)

    s = common(sub.add_parser("continuity", help="continuity sweep table"))
    s.add_argument("--t", type=float, default=1.0)
    s.add_argument("--eps", type=_floats, default=[1e-1, 1e-2, 1e-3])
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--pairs", action="store_true", help="include per-pair distances")

    s = common(sub.add_parser("verify-all", help="acceptance suite"), field_required=False)
    s.add_argument("--only", type=lambda t: [int(v) for v in t.split(",")],
                   help="comma separated criterion numbers")
    s.add_argument("--no-determinism", action="store_true",
                   help="skip criterion 10 (which repeats the suite)")
    return p


COMMANDS = {
    "flow": cmd_flow, "poincare": cmd_poincare, "blowup-check": cmd_blowup_check,
    "identify-check": cmd_identify_check, "lyapunov": cmd_lyapunov, "pliss": cmd_pliss,
    "detect-periodic": cmd_detect_periodic, "continuity": cmd_continuity,
    "verify-all": cmd_verify_all,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        result, passed = COMMANDS[args.command](args)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_ERROR
    except SingflowError as exc:
        print(f"singflow: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except ValueError as exc:
        print(f"singflow: invalid input: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if isinstance(result, str):
        text = result
    else:
        params = {k: v for k, v in vars(args).items() if k not in ("out", "command")}
        text = dumps(_envelope(args.command, params, result, bool(passed)))
    _emit(text, getattr(args, "out", None))
    return EXIT_OK if passed else EXIT_FAIL


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
