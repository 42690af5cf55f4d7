"""Command-line front end: ``covert-renewal <subcommand> [options]``.

Exit status is 0 on success, 1 on a usage error and 2 when the parameters are
well-formed but infeasible (irregular family, plan budget, unstable queue).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path
from typing import Any

import numpy as np

from . import detectors, harness, insertion, renewal, timing
from .errors import CovertRenewalError, DomainError, InfeasibleParameterError

UNITS = {"C": "nats/s", "value": "nats/s"}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


# ---------------------------------------------------------------------------
# Output

def _fmt(v) -> str:
    if isinstance(v, bool) or v is None or isinstance(v, str):
        return str(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        x = float(v)
        if x == 0.0:
            return "0.000000"
        if not math.isfinite(x):
            return str(x)
        return f"{x:.6f}" if 1e-3 <= abs(x) < 1e6 else f"{x:.6e}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {k: _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.generic):
        return v.item()
    if isinstance(v, float) and not math.isfinite(v):
        return str(v)
    return v


def _emit(rows: list[dict[str, Any]], fmt: str, out) -> None:
    if fmt == "json":
        payload = rows[0] if len(rows) == 1 else rows
        out.write(json.dumps(_jsonable(payload), sort_keys=False) + "\n")
    elif fmt == "csv":
        keys: list[str] = []
        for r in rows:
            keys.extend(k for k in r if k not in keys)
        w = csv.writer(out, lineterminator="\n")
        w.writerow(keys)
        for r in rows:
            w.writerow([json.dumps(_jsonable(r[k])) if isinstance(r.get(k), (dict, list)) else r.get(k, "")
                        for k in keys])
    else:
        for i, r in enumerate(rows):
            if i:
                out.write("\n")
            for k, v in r.items():
                unit = UNITS.get(k)
                out.write(f"{k} = {_fmt(v)}" + (f" {unit}" if unit else "") + "\n")


# ---------------------------------------------------------------------------
# Argument handling

def _spec(args) -> renewal.RenewalSpec:
    if args.family is None:
        raise UsageError("--family is required")
    return renewal.RenewalSpec(args.family, tuple(args.params or ()), args.scale_factor)


def _require(args, *names):
    missing = [n for n in names if getattr(args, n, None) is None]
    if missing:
        raise UsageError("missing required option(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _cmd_kl(args):
    _require(args, "rho")
    spec = _spec(args)
    scale = renewal.scale_stretch if args.variant == "stretch" else renewal.scale_compress
    s1 = scale(spec, args.rho)
    return [{"rho": args.rho, "variant": args.variant, "kl": renewal.kl_divergence(spec, s1),
             "kl_small_rho": renewal.kl_small_rho(spec, args.rho), "c": renewal.fisher_constant(spec)}]


def _cmd_fisher(args):
    return [{"c": renewal.fisher_constant(_spec(args))}]


def _cmd_regcheck(args):
    rep = renewal.check_regularity(_spec(args))
    row = {"family": rep.spec.family, "all_met": rep.all_met}
    row.update({k: v for k, v in rep.conditions_met.items()})
    row["notes"] = "; ".join(rep.notes)
    return [row]


def _cmd_plan(args):
    _require(args, "N", "epsilon", "zeta")
    p = insertion.plan(args.N, args.epsilon, args.zeta, _spec(args), args.psi_rule)
    d = p.to_dict()
    d["rho_standalone"] = insertion.standalone_rho(p.N, p.epsilon, p.c)
    return [d]


def _cmd_insert(args):
    _require(args, "N", "epsilon", "zeta")
    r = insertion.run_scenario1(_spec(args), args.N, args.epsilon, args.zeta, args.seed, args.psi_rule)
    return [r.to_record()]


def _cmd_timing(args):
    _require(args, "N", "epsilon", "zeta", "mu", "n", "M")
    r = timing.run_scenario2(_spec(args), args.N, args.epsilon, args.zeta, args.mu, args.n, args.M,
                             args.seed, args.psi_rule)
    return [r.to_record()]


def _cmd_detect(args):
    _require(args, "rho", "n_obs")
    spec = _spec(args)
    scale = renewal.scale_stretch if args.variant == "stretch" else renewal.scale_compress
    s1 = scale(spec, args.rho)
    n = args.n_obs

    def gen(s):
        return lambda rng: s.sample(n, rng)

    if args.detector == "sum_threshold":
        cfg = detectors.DetectorConfig.for_spec(spec, n, args.alpha)
        direction = "upper" if args.variant == "stretch" else "lower"
        est = detectors.estimate_errors("sum_threshold", gen(spec), gen(s1), args.trials, args.seed,
                                        config=cfg, direction=direction)
    elif args.detector == "lrt":
        est = detectors.estimate_errors("lrt", gen(spec), gen(s1), args.trials, args.seed, spec0=spec, spec1=s1)
    else:
        grid = np.geomspace(args.rho / 10.0, min(0.99, args.rho * 10.0), 21)
        est = detectors.estimate_errors("glrt_grid", gen(spec), gen(s1), args.trials, args.seed,
                                        spec0=spec, rho_grid=grid, variant=args.variant)
    row = {"detector": args.detector, "rho": args.rho, "n_obs": n, **est.to_record(),
           "total": est.total, "kl_bound": detectors.kl_error_lower_bound(spec, s1, n)}
    return [row]


def _cmd_capacity(args):
    _require(args, "mu")
    cb = timing.capacity_bound(_spec(args), args.mu)
    return [{"C": cb.value, "kl_penalty": cb.kl_penalty, "log_ratio_term": cb.log_ratio_term,
             "rate": cb.rate, "mu": cb.mu, "vacuous": cb.vacuous}]


def _cmd_sweep(args):
    if args.config is None:
        raise UsageError("sweep needs --config <experiment.json>")
    cfg = harness.ExperimentConfig.load(args.config)
    if args.output:
        cfg.output_path = args.output
    if args.trials_override is not None:
        cfg.trials = args.trials_override
    records = harness.run_sweep(cfg, workers=args.workers)
    return records


COMMANDS = {
    "kl": (_cmd_kl, "KL divergence to the scaled family, exact and small-rho"),
    "fisher": (_cmd_fisher, "Fisher constant c of the scale family"),
    "regcheck": (_cmd_regcheck, "regularity diagnostics"),
    "plan": (_cmd_plan, "buffering fraction and scaling parameters"),
    "insert": (_cmd_insert, "one two-phase insertion run"),
    "timing": (_cmd_timing, "one covert timing transmission"),
    "detect": (_cmd_detect, "Monte Carlo detector error rates"),
    "capacity": (_cmd_capacity, "G/M/1 timing capacity lower bound"),
    "sweep": (_cmd_sweep, "parameter sweep from an experiment config"),
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--family", help="inter-arrival family, e.g. exponential, gamma, weibull")
    common.add_argument("--params", type=float, nargs="+", help="family parameters")
    common.add_argument("--scale-factor", type=float, default=1.0, help="multiplies every inter-arrival time")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--format", choices=("text", "json", "csv"), default="text")
    common.add_argument("--config", help="JSON file; its keys override command-line options")

    parser = _Parser(prog="covert-renewal", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)
    sub.required = True
    subs = {}
    for name, (_, helptext) in COMMANDS.items():
        subs[name] = sub.add_parser(name, parents=[common], help=helptext, description=helptext)

    for name in ("kl", "detect"):
        subs[name].add_argument("--rho", type=float)
        subs[name].add_argument("--variant", choices=("stretch", "compress"), default="stretch")
    for name in ("plan", "insert", "timing"):
        subs[name].add_argument("--N", type=int)
        subs[name].add_argument("--epsilon", type=float)
        subs[name].add_argument("--zeta", type=float)
        subs[name].add_argument("--psi-rule", choices=insertion.PSI_RULES, default="fisher")
    for name in ("timing", "capacity"):
        subs[name].add_argument("--mu", type=float)
    subs["timing"].add_argument("--n", type=int)
    subs["timing"].add_argument("--M", type=int)
    subs["detect"].add_argument("--detector", choices=detectors.DETECTORS, default="lrt")
    subs["detect"].add_argument("--n-obs", type=int)
    subs["detect"].add_argument("--trials", type=int, default=1000)
    subs["detect"].add_argument("--alpha", type=float, default=0.05)
    subs["sweep"].add_argument("--output", help="override output_path")
    subs["sweep"].add_argument("--trials", dest="trials_override", type=int)
    subs["sweep"].add_argument("--workers", type=int)
    return parser


def _apply_config(args, parser) -> None:
    if args.config is None or args.command == "sweep":
        return
    try:
        data = json.loads(Path(args.config).read_text())
    except (OSError, ValueError) as exc:
        raise UsageError(f"cannot read config {args.config}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError("config must be a JSON object")
    for key, val in data.items():
        dest = key.replace("-", "_")
        if not hasattr(args, dest) or dest in ("command", "config"):
            raise UsageError(f"config key {key!r} is not an option of {args.command!r}")
        setattr(args, dest, val)


def main(argv=None, out=None, err=None) -> int:
    out = out or sys.stdout
    err = err or sys.stderr
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    func = COMMANDS[args.command][0]
    try:
        _apply_config(args, parser)
        rows = func(args)
    except UsageError as exc:
        print(f"covert-renewal {args.command}: error: {exc}", file=err)
        return 1
    except InfeasibleParameterError as exc:
        print(f"covert-renewal {args.command}: infeasible: {exc}", file=err)
        return 2
    except (DomainError, CovertRenewalError) as exc:
        print(f"covert-renewal {args.command}: error: {exc}", file=err)
        return 1
    buf = io.StringIO()
    _emit(rows, args.format, buf)
    out.write(buf.getvalue())
    return 0


if __name__ == "__main__":
    sys.exit(main())
