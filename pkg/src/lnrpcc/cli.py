"""Command line entry point: ``lnrpcc run | beta-sweep | tune``.

Settings resolve as spec defaults, then ``--config`` JSON, then flags.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import harness
from .harness import ExperimentSpec


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def _column(text: str):
    try:
        return int(text)
    except ValueError:
        return text


# flag name -> (spec field, parser)
_SPEC_FLAGS = {
    "dataset": ("dataset", str),
    "label_column": ("label_column", _column),
    "methods": ("methods", lambda s: [m.strip() for m in s.split(",") if m.strip()]),
    "l": ("l", int),
    "noise": ("noise_fractions", _floats),
    "trials": ("trials", int),
    "repeats": ("repeats", int),
    "tune_repeats": ("tune_repeats", int),
    "k_grid": ("k_grid", _ints),
    "sigma_grid": ("sigma_grid", _floats),
    "seed": ("seed", int),
    "metric": ("metric", str),
    "splits": ("splits", str),
    "p_grd": ("p_grd", float),
    "delta_v": ("delta_v", float),
    "delta_rho": ("delta_rho", float),
    "alpha": ("alpha", float),
    "beta": ("beta", int),
    "max_iterations": ("max_total_iterations", int),
    "workers": ("workers", int),
    "trace_dir": ("trace_dir", str),
}


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="JSON file with ExperimentSpec fields")
    p.add_argument("--dataset", help="iris, wine, digits, gauss[:opt=val,...] or a CSV path")
    p.add_argument("--label-column", help="label column index or header name (CSV only)")
    p.add_argument("--no-normalize", action="store_true", help="skip z-score feature scaling")
    p.add_argument("--methods", help=f"comma-separated subset of {','.join(harness.METHODS)}")
    p.add_argument("--l", help="labeled subset size")
    p.add_argument("--noise", help="comma-separated noise fractions q/l")
    p.add_argument("--trials", help="labeled/noisy subsets per noise fraction")
    p.add_argument("--repeats", help="evaluation runs per trial for particle methods")
    p.add_argument("--tune-repeats", help="runs averaged per grid candidate")
    p.add_argument("--k-grid", help="comma-separated k candidates")
    p.add_argument("--sigma-grid", help="comma-separated sigma candidates")
    p.add_argument("--seed", help="master seed")
    p.add_argument("--metric", choices=["unlabeled", "all"], help="error population")
    p.add_argument("--splits", help="JSON file of labeled index lists, one per trial")
    p.add_argument("--p-grd")
    p.add_argument("--delta-v")
    p.add_argument("--delta-rho")
    p.add_argument("--alpha")
    p.add_argument("--beta")
    p.add_argument("--max-iterations")
    p.add_argument("--workers", help=f"worker processes (overridden by ${harness.WORKERS_ENV})")
    p.add_argument("--trace-dir", help="write one move trace per evaluation run here")
    p.add_argument("-v", "--verbose", action="store_true")


def build_spec(args: argparse.Namespace, **overrides) -> ExperimentSpec:
    values: dict = {}
    if args.config is not None:
        values.update(json.loads(args.config.read_text()))
    for flag, (name, parse) in _SPEC_FLAGS.items():
        raw = getattr(args, flag, None)
        if raw is not None:
            values[name] = parse(raw)
    if args.no_normalize:
        values["normalize"] = False
    values.update(overrides)
    return ExperimentSpec.from_dict(values)


def _print_table(table: harness.ResultTable) -> None:
    if table.key == "beta":
        print("beta  mean_error  std_error")
        for r in table.rows:
            print(f"{r.beta:>4}  {r.mean_error:10.4f}  {r.std_error:9.4f}")
        return
    methods = list(dict.fromkeys(r.method for r in table.rows))
    noises = list(dict.fromkeys(r.noise for r in table.rows))
    print("q_size " + " ".join(f"{m:>7}" for m in methods))
    for q in noises:
        print(f"{q:6.2f} " + " ".join(f"{table.row(m, q).mean_error:7.4f}" for m in methods))


def _write(table: harness.ResultTable, out: str | None) -> None:
    _print_table(table)
    if out:
        prefix = Path(out)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        harness.emit(table, prefix.with_suffix(".csv"), "csv")
        harness.emit(table, prefix.with_suffix(".json"), "json")
        print(f"wrote {prefix.with_suffix('.csv')} and {prefix.with_suffix('.json')}")


def cmd_run(args) -> int:
    table = harness.run_experiment(build_spec(args))
    _write(table, args.out)
    return 0


def cmd_beta_sweep(args) -> int:
    spec = build_spec(args)
    table = harness.beta_sweep(spec, _ints(args.betas))
    _write(table, args.out)
    return 0


def cmd_tune(args) -> int:
    spec = build_spec(args, methods=[args.method])
    spec.validate()
    ctx = harness.Context(spec)
    fi = 0
    cfg = ctx.split(fi, args.trial)
    value, errors = harness.tune_split(ctx, cfg, fi, args.trial, 0, args.method)
    grid = spec.k_grid if args.method in harness.PCC_METHODS else spec.sigma_grid
    print(json.dumps({"method": args.method, "trial": args.trial, "tuned": value, "grid": grid, "errors": errors}))
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lnrpcc", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="noise sweep over methods, writes CSV and JSON")
    _add_common(p)
    p.add_argument("--out", help="output prefix (PREFIX.csv, PREFIX.json)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("beta-sweep", help="LNR error against the number of reset epochs")
    _add_common(p)
    p.add_argument("--betas", default="1,2,5,10,20,50")
    p.add_argument("--out")
    p.set_defaults(func=cmd_beta_sweep)

    p = sub.add_parser("tune", help="grid-search one method on one trial's split")
    _add_common(p)
    p.add_argument("--method", required=True, choices=harness.METHODS)
    p.add_argument("--trial", type=int, default=0)
    p.set_defaults(func=cmd_tune)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"lnrpcc: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
