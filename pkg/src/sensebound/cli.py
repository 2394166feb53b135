"""Batch front-end.

Subcommands: decompose, run, sweep, audit, report. Exit codes: 0 success,
1 operational error (including usage errors), 2 acceptance-invariant
violation (a bounded run whose information rate falls short of the
expansion rate). The master seed can also be supplied through the
SENSEBOUND_SEED environment variable; an explicit --seed wins.
"""

import argparse
import json
import os
import sys

import numpy as np

from .config import parse_config, parse_config_file
from .errors import SenseboundError
from .experiments import bundled_names, bundled_text
from .report import (
    Series,
    recompute_summary_from_csvs,
    render_svg,
    run_experiment,
    run_sweep,
    to_jsonable,
)

SEED_ENV_VAR = "SENSEBOUND_SEED"


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage problems are operational errors (exit 1); exit code 2 is
    # reserved for acceptance-invariant violations
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="sensebound", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def add_common(sp, config_required=True):
        group = sp.add_mutually_exclusive_group(required=config_required)
        group.add_argument("--config", help="path to an experiment config file")
        group.add_argument(
            "--experiment",
            choices=bundled_names(),
            help="name of a bundled experiment",
        )
        sp.add_argument("--seed", type=int, default=None, help="master seed (uint64)")
        sp.add_argument("--runs", type=int, default=None, help="override run count")
        sp.add_argument("--horizon", type=int, default=None, help="override horizon")
        sp.add_argument("--out", default=None, help="output bundle directory")
        sp.add_argument(
            "--format", choices=("csv", "json"), default=None,
            help="restrict bundle outputs to one format",
        )
        sp.add_argument(
            "--workers", type=int, default=os.cpu_count() or 1,
            help="worker processes for ensemble runs",
        )

    sp = sub.add_parser("decompose", help="print the mode decomposition of a system")
    add_common(sp)

    sp = sub.add_parser("run", help="run one experiment and write its bundle")
    add_common(sp)

    sp = sub.add_parser("sweep", help="vary one scalar parameter over a list")
    add_common(sp)
    sp.add_argument("--param", required=True, help="dotted parameter path, e.g. channel.R")
    sp.add_argument("--values", required=True, help="comma-separated JSON scalars")

    sp = sub.add_parser("audit", help="run with assumption audits enabled")
    add_common(sp)

    sp = sub.add_parser("report", help="recompute summary stats from a bundle's CSVs")
    sp.add_argument("--bundle", required=True, help="existing bundle directory")
    return p


def _load_config(args):
    if getattr(args, "config", None):
        return parse_config_file(args.config)
    return parse_config(bundled_text(args.experiment))


def _resolve_seed(args):
    if args.seed is not None:
        return args.seed
    env = os.environ.get(SEED_ENV_VAR)
    return int(env) if env else None


def _cmd_decompose(args) -> int:
    cfg = _load_config(args)
    from .config import build_model
    from .system import decompose

    decomp = decompose(build_model(cfg), cond_cap=float(cfg.system.get("cond_cap", 1e8)))
    out = {
        "n": decomp.n,
        "n_u": decomp.n_u,
        "r_exp_bits_per_step": decomp.r_exp,
        "eigenvalues": [{"re": l.real, "im": l.imag} for l in decomp.eigenvalues],
        "A_u": decomp.A_u,
        "A_s": decomp.A_s,
        "B_u": decomp.B_u,
        "B_s": decomp.B_s,
        "T": decomp.T,
        "cond_T": float(np.linalg.cond(decomp.T)),
    }
    print(json.dumps(to_jsonable(out), indent=2, sort_keys=True))
    return 0


def _cmd_run(args, force_audit: bool = False) -> int:
    cfg = _load_config(args)
    if args.format is not None:
        cfg.outputs["formats"] = [args.format]
    if force_audit:
        cfg.run["audit"] = True
        cfg.run.setdefault("runs", 1)
    bundle = run_experiment(
        cfg,
        out_dir=args.out,
        seed=_resolve_seed(args),
        runs=args.runs,
        horizon=args.horizon,
        workers=max(1, args.workers),
    )
    s = bundle.summary
    print(f"experiment: {s['experiment']}")
    print(f"bundle:     {bundle.out_dir}")
    print(f"r_exp:      {s['r_exp_bits_per_step']:.6f} bits/step")
    if s["di_rate_bits_per_step"] is not None:
        print(f"di rate:    {s['di_rate_bits_per_step']:.6f} bits/step")
    oc = s["outcome"]
    print(
        "outcome:    bounded_state={ms_bounded_state} bounded_error={ms_bounded_error} "
        "asymptotic_error={asymptotic_error}".format(**oc)
    )
    if s.get("necessity"):
        nec = s["necessity"]
        status = "vacuous" if not nec["applicable"] else ("pass" if nec["passed"] else "FAIL")
        print(f"necessity:  {status} ({nec['detail']})")
    if s.get("audits"):
        for name, v in s["audits"]["verdicts"].items():
            state = "n/a" if not v["applicable"] else ("pass" if v["passed"] else "fail")
            print(f"{name}: {state} ({v['detail']})")
        acc = s["audits"].get("accumulation")
        if acc:
            print(
                f"hessian accumulation: first_negative_t={acc['first_negative_t']} "
                f"(threshold {acc['threshold']}, {acc['n_positive']} positive steps)"
            )
    if bundle.acceptance_violation:
        print("ACCEPTANCE VIOLATION: bounded run with deficient information rate",
              file=sys.stderr)
        return 2
    return 0


def _cmd_sweep(args) -> int:
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            text = fh.read()
    else:
        text = bundled_text(args.experiment)
    try:
        values = [json.loads(v) for v in args.values.split(",")]
    except json.JSONDecodeError as exc:
        raise _UsageError(f"--values must be comma-separated JSON scalars: {exc}")
    out = args.out or "out/sweep"
    result = run_sweep(
        text, args.param, values, out, seed=_resolve_seed(args),
        workers=max(1, args.workers),
    )
    for row in result["rows"]:
        print(
            f"{args.param}={row['value']}: di_rate={row['di_rate_bits_per_step']} "
            f"bounded_error={row['ms_bounded_error']} halted={row['n_halted']}"
        )
    print(f"sweep bundle: {out}")
    return 2 if result["violation"] else 0


def _cmd_report(args) -> int:
    bundle_dir = args.bundle
    recomputed = recompute_summary_from_csvs(bundle_dir)
    summary_path = os.path.join(bundle_dir, "summary.json")
    status = 0
    if os.path.exists(summary_path):
        with open(summary_path, "r", encoding="utf-8") as fh:
            stored = json.load(fh)
        pairs = [
            ("di_rate_bits_per_step", stored.get("di_rate_bits_per_step")),
            ("mean_err_sq", stored.get("ensemble", {}).get("mean_err_sq")),
            ("mean_state_sq", stored.get("ensemble", {}).get("mean_state_sq")),
        ]
        for key, stored_val in pairs:
            fresh = recomputed[key if key != "mean_err_sq" and key != "mean_state_sq" else key]
            if stored_val is None:
                continue
            a = np.atleast_1d(np.asarray(stored_val, dtype=float))
            b = np.atleast_1d(np.asarray(fresh, dtype=float))
            if a.shape != b.shape or not np.allclose(a, b, rtol=1e-9, atol=1e-12):
                print(f"MISMATCH in {key}: summary.json disagrees with CSVs", file=sys.stderr)
                status = 1
        if status == 0:
            print("summary.json matches statistics recomputed from CSVs")
    path = os.path.join(bundle_dir, "recomputed.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(to_jsonable(recomputed), fh, indent=2, sort_keys=True)
        fh.write("\n")
    ts = list(range(len(recomputed["mean_err_sq"])))
    if ts:
        svg = render_svg(
            [Series("mean ||e||^2 (recomputed)", tuple(ts), tuple(recomputed["mean_err_sq"]))],
            title="recomputed estimation error",
            ylabel="E ||e_t||^2",
        )
        with open(os.path.join(bundle_dir, "recomputed_err.svg"), "w", encoding="utf-8") as fh:
            fh.write(svg)
    print(f"recomputed stats written to {path}")
    return status


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "decompose":
            return _cmd_decompose(args)
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "audit":
            return _cmd_run(args, force_audit=True)
        if args.command == "report":
            return _cmd_report(args)
        raise _UsageError(f"unknown command {args.command!r}")
    except _UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except SenseboundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
