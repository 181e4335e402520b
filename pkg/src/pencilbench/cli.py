"""Batch command line front end.

Subcommands: ``analyze``, ``bounds``, ``locus``, ``simulate``, ``validate``.
Exit codes: 0 success, 1 failed validation checks, 2 input error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__
from . import analysis as an
from . import methods as mth
from . import models as mdl
from . import tdi
from . import validation
from .exceptions import MethodError, ModelError, NoCrossingError, PencilBenchError

log = logging.getLogger("pencilbench")

EXIT_OK = 0
EXIT_CHECKS_FAILED = 1
EXIT_INPUT = 2
EXIT_NUMERIC = 3

LOCUS_COLUMNS = ("method", "h", "re_s", "im_s", "re_stilde", "im_stilde", "abs_ds", "d_zeta_pct")
BOUND_COLUMNS = ("method", "criterion", "target", "h", "open_bound", "monotone")


class InputError(Exception):
    """Bad command line input; maps to exit code 2."""


@dataclass
class RunManifest:
    command: str
    inputs: dict
    outputs: list = field(default_factory=list)
    version: str = __version__
    timestamp: str = ""

    def write(self, path: Path) -> None:
        self.timestamp = self.timestamp or datetime.now(timezone.utc).isoformat(timespec="seconds")
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------- formatting


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def render_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(row[c]) for c in columns])
    return buf.getvalue()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return [_jsonable(obj.real), _jsonable(obj.imag)]
    return obj


def emit(args, command: str, inputs: dict, columns, rows, extra_json=None) -> None:
    """Write CSV (``--out``) and JSON (``--json``) with manifests, or CSV to stdout."""
    text = render_csv(columns, rows)
    written = []
    if args.out:
        Path(args.out).write_text(text)
        written.append(str(args.out))
    if getattr(args, "json", None):
        payload = extra_json if extra_json is not None else rows
        Path(args.json).write_text(json.dumps(_jsonable(payload), indent=2) + "\n")
        written.append(str(args.json))
    if not args.out:
        sys.stdout.write(text)
    for p in written:
        RunManifest(command, inputs, written).write(Path(p + ".manifest.json"))


# ---------------------------------------------------------------- input parsing


def parse_methods(text: str) -> list:
    try:
        return mth.parse_methods(text)
    except (MethodError, OSError) as exc:
        raise InputError(str(exc)) from exc


def parse_complex(text: str) -> complex:
    t = text.strip().replace(" ", "").replace("i", "j")
    try:
        return complex(t)
    except ValueError:
        raise InputError(f"cannot parse complex value {text!r}; use e.g. -0.17+7.67j") from None


def parse_floats(text: str, what: str) -> list[float]:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"{what}: expected comma separated numbers, got {text!r}") from None
    if not vals:
        raise InputError(f"{what}: empty list")
    return vals


def parse_h_range(text: str) -> tuple[float, float]:
    vals = parse_floats(text, "--h-range")
    if len(vals) != 2 or not 0 < vals[0] < vals[1]:
        raise InputError(f"--h-range needs 'lo,hi' with 0 < lo < hi, got {text!r}")
    return vals[0], vals[1]


def _builtin(spec: str) -> mdl.DaeModel:
    parts = spec.split(":")
    name = parts[1] if len(parts) > 1 else ""
    rest = ":".join(parts[2:])
    if name == "dahlquist":
        if not rest:
            raise InputError("builtin:dahlquist needs an eigenvalue, e.g. builtin:dahlquist:-1")
        return mdl.dahlquist(parse_complex(rest))
    if name == "stiff2":
        vals = parse_floats(rest.replace(":", ","), "builtin:stiff2")
        if len(vals) != 2:
            raise InputError("builtin:stiff2 needs two decay rates, e.g. builtin:stiff2:1000,0.02")
        return mdl.stiff2(*vals)
    if name == "smib":
        params = {}
        for item in filter(None, rest.replace(":", ",").split(",")):
            key, sep, val = item.partition("=")
            if not sep:
                raise InputError(f"builtin:smib parameters are key=value, got {item!r}")
            params[key] = float(val)
        return mdl.smib(**params)
    raise InputError(f"unknown builtin model {spec!r}; use dahlquist, stiff2 or smib")


def resolve_model(model: str | None, mode: str | None, fmt_name: str | None = None) -> mdl.LinearizedModel:
    """Turn ``--model`` / ``--mode`` into a linearized model."""
    if mode is not None:
        return mdl.mode_model(parse_complex(mode))
    if model is None:
        raise InputError("one of --model or --mode is required")
    if model.startswith("mode:"):
        return mdl.mode_model(parse_complex(model[5:]))
    if model.startswith("builtin:"):
        m = _builtin(model)
        x_o = mdl.find_equilibrium(m)
        return mdl.linearize(m, x_o)
    return mdl.load_linear_model(model, fmt_name)


def resolve_dae(model: str | None, mode: str | None, fmt_name: str | None = None) -> mdl.DaeModel:
    if model is not None and model.startswith("builtin:"):
        return _builtin(model)
    lm = resolve_model(model, mode, fmt_name)
    return lm.model


def parse_disturbance(text: str) -> tdi.Disturbance:
    t, sep, body = text.partition(":")
    if not sep:
        raise InputError(f"disturbance must look like 't:key=value[;key=value]', got {text!r}")
    changes = {}
    for item in filter(None, body.split(";")):
        key, eq, val = item.partition("=")
        if not eq:
            raise InputError(f"disturbance change {item!r} is not key=value")
        try:
            changes[key.strip()] = float(val)
        except ValueError:
            raise InputError(f"disturbance value {val!r} is not a number") from None
    try:
        return tdi.Disturbance(float(t), changes)
    except ValueError:
        raise InputError(f"bad disturbance time {t!r}") from None


# ---------------------------------------------------------------- commands


def _model_inputs(args) -> dict:
    return {"model": args.model, "mode": args.mode, "format": getattr(args, "format", None)}


def cmd_analyze(args) -> int:
    lm = resolve_model(args.model, args.mode, args.format)
    specs = parse_methods(args.methods)
    hs = parse_floats(args.h, "--h")
    reports = an.sweep(specs, lm, hs, args.workers)
    rows = [row for rep in reports for row in rep.csv_rows()]
    inputs = dict(_model_inputs(args), methods=[s.label for s in specs], h=hs)
    emit(args, "analyze", inputs, an.REPORT_COLUMNS, rows, [rep.to_dict() for rep in reports])
    return EXIT_OK


def cmd_bounds(args) -> int:
    target_model = (parse_complex(args.mode) if args.mode is not None
                    else resolve_model(args.model, None, args.format))
    h_range = parse_h_range(args.h_range) if args.h_range else an.DEFAULT_H_RANGE
    specs = parse_methods(args.method)
    rows = []
    for spec in specs:
        if args.ds is not None:
            crit, tau = "ds", args.ds
            try:
                b = an.step_for_target_distortion(spec, target_model, tau, h_range)
            except NoCrossingError as exc:
                if exc.at_lower_end or not tau > 0:
                    raise
                log.warning("%s: %s", spec.label, exc)
                b = an.StepBound(float(h_range[1]), open_bound=True, criterion=f"ds={tau:g}")
        elif args.dzeta is not None:
            crit, tau = "dzeta_pct", args.dzeta
            b = an.damping_bound_step(spec, target_model, tau / 100.0, h_range)
        else:
            crit, tau = "stability", math.nan
            b = an.stability_margin(spec, target_model, h_range)
        rows.append({"method": spec.label, "criterion": crit, "target": tau, "h": b.h,
                     "open_bound": b.open_bound, "monotone": b.monotone})
    inputs = dict(_model_inputs(args), methods=[s.label for s in specs], h_range=list(h_range),
                  ds=args.ds, dzeta_pct=args.dzeta, stability=args.stability)
    emit(args, "bounds", inputs, BOUND_COLUMNS, rows)
    return EXIT_OK


def cmd_locus(args) -> int:
    target_model = (parse_complex(args.mode) if args.mode is not None
                    else resolve_model(args.model, None, args.format))
    lo, hi = parse_h_range(args.h_range)
    if args.points < 2:
        raise InputError("--points must be at least 2")
    grid = np.geomspace(lo, hi, args.points)
    specs = parse_methods(args.methods)
    rows = []
    for spec in specs:
        for p in an.root_locus(spec, target_model, grid):
            rows.append({"method": spec.label, "h": p.h, "re_s": p.s.real, "im_s": p.s.imag,
                         "re_stilde": p.s_tilde.real, "im_stilde": p.s_tilde.imag,
                         "abs_ds": p.abs_ds, "d_zeta_pct": 100.0 * p.d_zeta})
    inputs = dict(_model_inputs(args), methods=[s.label for s in specs], h_range=[lo, hi],
                  points=args.points)
    emit(args, "locus", inputs, LOCUS_COLUMNS, rows)
    return EXIT_OK


def _initial_state(m: mdl.DaeModel, args) -> np.ndarray:
    if args.x0:
        x0 = np.array(parse_floats(args.x0, "--x0"))
        if x0.size != m.dim:
            raise InputError(f"--x0 has {x0.size} entries, model has {m.dim} variables")
    else:
        x0 = mdl.find_equilibrium(m)
    for item in args.perturb or []:
        idx, sep, val = item.partition("=")
        try:
            x0[int(idx)] += float(val)
        except (ValueError, IndexError):
            raise InputError(f"--perturb expects index=delta within range, got {item!r}") from None
    return x0


def cmd_simulate(args) -> int:
    m = resolve_dae(args.model, args.mode, args.format)
    specs = parse_methods(args.method)
    if len(specs) != 1:
        raise InputError("simulate takes exactly one --method")
    dists = tuple(parse_disturbance(d) for d in args.disturbance or [])
    cfg = tdi.SimulationConfig(args.h, args.t_end, specs[0], disturbances=dists)
    x0 = _initial_state(m, args)
    traj = tdi.simulate(m, cfg, x0)
    if not -m.dim <= args.var < m.dim:
        raise InputError(f"--var {args.var} out of range for {m.dim} variables")

    cols = ["t"] + [f"x_{i}" for i in range(m.dim)] + ["newton_iters"]
    rows = [dict(t=t, newton_iters=int(n), **{f"x_{i}": v for i, v in enumerate(x)})
            for t, x, n in zip(traj.times, traj.states, traj.newton_iters)]
    summary = {"method": specs[0].label, "h": args.h, "t_end": args.t_end,
               "steps": len(traj.times) - 1, "diverged": traj.diverged,
               "divergence_time": traj.divergence_time, "message": traj.message,
               "newton_iters_total": int(np.sum(traj.newton_iters))}
    if args.reference:
        ref = tdi.reference_trajectory(m, args.t_end, x0, dists)
        summary["mismatch"] = tdi.trajectory_mismatch(traj, ref, args.var)
        summary["mismatch_var"] = args.var
    inputs = dict(_model_inputs(args), method=specs[0].label, h=args.h, t_end=args.t_end,
                  disturbances=args.disturbance or [], x0=list(map(float, x0)),
                  reference=args.reference)
    emit(args, "simulate", inputs, cols, rows, {"summary": summary, "trajectory": rows})
    err = sys.stderr if not args.out else sys.stdout
    for k, v in summary.items():
        print(f"# {k}: {fmt(v) if v is not None else 'none'}", file=err)
    return EXIT_OK


def cmd_validate(args) -> int:
    specs = parse_methods(args.methods) if args.methods else None
    results = validation.run_suite(specs, trials=args.trials, seed=args.seed,
                                   itm_perturbation=args.inject_itm_perturbation)
    for r in results:
        print(r.line())
    failed = sum(not r.passed for r in results)
    print(f"{len(results) - failed}/{len(results)} checks passed")
    return EXIT_OK if failed == 0 else EXIT_CHECKS_FAILED


# ---------------------------------------------------------------- parser


def _add_model_args(p, mode_help="scalar mode re+imj"):
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--model", help="builtin:NAME[:ARGS], mode:re+imj, a JSON file or a matrix-market stem")
    g.add_argument("--mode", help=mode_help)
    p.add_argument("--format", choices=("json", "mm"), help="model file format (inferred by default)")


def _add_output_args(p):
    p.add_argument("--out", help="write CSV here (default: stdout)")
    p.add_argument("--json", help="also write a JSON mirror here")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pencilbench", description="Matrix-pencil analysis of integration methods.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="per-mode distortion report for methods x steps")
    _add_model_args(p)
    p.add_argument("--methods", required=True)
    p.add_argument("--h", required=True, help="comma separated step sizes")
    p.add_argument("--workers", type=int, default=None)
    _add_output_args(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("bounds", help="step-size bound for a criterion")
    _add_model_args(p)
    p.add_argument("--method", required=True)
    crit = p.add_mutually_exclusive_group(required=True)
    crit.add_argument("--ds", type=float, help="target |d_s|")
    crit.add_argument("--dzeta", type=float, help="max damping distortion in percent")
    crit.add_argument("--stability", action="store_true")
    p.add_argument("--h-range", help="lo,hi")
    _add_output_args(p)
    p.set_defaults(func=cmd_bounds)

    p = sub.add_parser("locus", help="root locus of mapped modes over a step range")
    _add_model_args(p)
    p.add_argument("--methods", required=True)
    p.add_argument("--h-range", default="1e-4,1", help="lo,hi")
    p.add_argument("--points", type=int, default=81)
    _add_output_args(p)
    p.set_defaults(func=cmd_locus)

    p = sub.add_parser("simulate", help="fixed-step time-domain integration")
    _add_model_args(p)
    p.add_argument("--method", required=True)
    p.add_argument("--h", type=float, required=True)
    p.add_argument("--t-end", type=float, required=True)
    p.add_argument("--x0", help="comma separated initial state (default: equilibrium)")
    p.add_argument("--perturb", action="append", help="index=delta added to the initial state")
    p.add_argument("--disturbance", action="append", help="t:key=value[;key=value]")
    p.add_argument("--reference", action="store_true", help="score against a fine-step reference")
    p.add_argument("--var", type=int, default=0, help="variable index for the mismatch")
    _add_output_args(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("validate", help="run the pencil-vs-oracle property suite")
    p.add_argument("--methods", default=None)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--inject-itm-perturbation", type=float, default=0.0,
                   help="scale the ITM pencil rhs by (1+eps); a negative control")
    p.set_defaults(func=cmd_validate)
    return ap


_VALUE_OPTS = ("--mode", "--model", "--x0", "--h", "--h-range", "--ds", "--dzeta", "--perturb")


def _glue_negative_values(argv):
    """Rewrite ``--mode -1+2j`` as ``--mode=-1+2j`` so argparse keeps the value."""
    out = []
    i = 0
    while i < len(argv):
        tok = argv[i]
        if tok in _VALUE_OPTS and i + 1 < len(argv) and argv[i + 1].startswith("-") \
                and len(argv[i + 1]) > 1 and (argv[i + 1][1].isdigit() or argv[i + 1][1] == "."):
            out.append(f"{tok}={argv[i + 1]}")
            i += 2
            continue
        out.append(tok)
        i += 1
    return out


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    args = build_parser().parse_args(_glue_negative_values(argv))
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (InputError, ModelError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (PencilBenchError, np.linalg.LinAlgError, FloatingPointError, ValueError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
