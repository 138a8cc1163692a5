"""Command-line interface.

Subcommands::

    multirank test      X.csv Y.csv | data.csv --group-col g     two-sample test, JSON out
    multirank ksample   data.csv --group-col g | A.csv B.csv ...  K-sample test, JSON out
    multirank calibrate --sizes 100,100 --p 2 --R 2000            null size, CSV out
    multirank power     --sizes 200,200 --effects 0,1,2,3         local power curve, CSV out
    multirank efficiency --sizes 200,200 --p 2                    rank test vs likelihood ratio, CSV out
    multirank figure    --out DIR                                 joint vs Bonferroni curves, CSV files
    multirank bench     --p 4                                     rank-map timings, CSV out

Exit status is 0 on success (whatever the test decides), 2 for usage and
data errors and 3 for internal numerical failures.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import warnings

import numpy as np

from .errors import (BudgetExceededError, DegenerateSampleError, DomainError, EvaluationError,
                     InvalidArgumentError, MultirankError, RankDeficiencyError)
from .exact import DEFAULT_BUDGET
from .pipeline import MODES, rank_test
from .rank_map import SampleSet, runtime_profile
from .simulate import (NULLS, PAPER_PAIRS, SimConfig, calibrate_null, efficiency_report,
                       joint_vs_bonferroni, power_curve, write_csv)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class DataError(MultirankError):
    """Malformed input file."""


# ---------------------------------------------------------------------------
# Input


def read_csv_matrix(path: str, group_col: str | None = None):
    """Read a CSV with a header row into a float matrix and optional label column.

    Returns ``(data, labels, columns)`` where ``labels`` is None without a
    group column.  Every non-label cell must parse as a finite float.
    """
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"{path}: cannot open ({exc.strerror})") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        if group_col is not None and group_col not in header:
            raise DataError(f"{path}: line 1: no column named {group_col!r}")
        gidx = header.index(group_col) if group_col is not None else None
        rows, labels = [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: line {line_no}: expected {len(header)} fields, got {len(row)}")
            values = []
            for j, cell in enumerate(row):
                if j == gidx:
                    labels.append(cell.strip())
                    continue
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(
                        f"{path}: line {line_no}: column {header[j]!r}: {cell!r} is not a number") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: line {line_no}: column {header[j]!r}: non-finite value")
                values.append(v)
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    columns = [h for j, h in enumerate(header) if j != gidx]
    if not columns:
        raise DataError(f"{path}: no numeric columns")
    return np.array(rows, dtype=float), (labels if gidx is not None else None), columns


def load_sample(paths, group_col: str | None) -> tuple[SampleSet, list]:
    """Build the pooled sample from one labelled file or several per-group files.

    Group ids follow the order of first appearance (labelled file) or the
    order of the files.
    """
    if group_col is not None:
        if len(paths) != 1:
            raise DataError("--group-col takes exactly one input file")
        data, labels, _ = read_csv_matrix(paths[0], group_col)
        names = list(dict.fromkeys(labels))
        code = {name: i for i, name in enumerate(names)}
        groups = np.array([code[v] for v in labels])
        return SampleSet(data, groups), names
    if len(paths) < 2:
        raise DataError("give at least two files, or one file with --group-col")
    parts = []
    width = None
    for path in paths:
        data, _, cols = read_csv_matrix(path)
        if width is not None and len(cols) != width:
            raise DataError(f"{path}: has {len(cols)} columns, expected {width}")
        width = len(cols)
        parts.append(data)
    return SampleSet.from_groups(*parts), [os.path.basename(p) for p in paths]


# ---------------------------------------------------------------------------
# Output


def _emit_text(text: str, out: str | None):
    if out is None or out == "-":
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        with open(out, "w") as fh:
            fh.write(text if text.endswith("\n") else text + "\n")


def _emit_rows(rows, out: str | None, fieldnames=None):
    if out is None or out == "-":
        buf = io.StringIO()
        rows = list(rows)
        names = fieldnames or (list(rows[0]) if rows else [])
        w = csv.DictWriter(buf, fieldnames=names)
        w.writeheader()
        for row in rows:
            w.writerow({k: repr(float(v)) if isinstance(v, (float, np.floating)) else v for k, v in row.items()})
        sys.stdout.write(buf.getvalue())
    else:
        write_csv(out, rows, fieldnames)


# ---------------------------------------------------------------------------
# Subcommands


def _weights(args) -> str:
    if args.family and args.weights:
        raise InvalidArgumentError("give either --weights or --family, not both")
    if args.family:
        return f"model:{args.family}"
    return args.weights or "van_der_waerden"


def _sizes(text: str) -> tuple:
    try:
        sizes = tuple(int(s) for s in text.split(","))
    except ValueError:
        raise InvalidArgumentError(f"--sizes must be comma-separated integers, got {text!r}") from None
    return sizes


def _floats(text: str) -> list:
    try:
        return [float(s) for s in text.split(",")]
    except ValueError:
        raise InvalidArgumentError(f"expected comma-separated numbers, got {text!r}") from None


def run_test(args, k_sample: bool) -> int:
    sample, names = load_sample(args.inputs, args.group_col)
    if not k_sample and sample.K != 2:
        raise InvalidArgumentError(f"'test' needs exactly two groups, found {sample.K}; use 'ksample'")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        outcome = rank_test(sample, _weights(args), mode=args.mode, B=args.B, seed=args.seed,
                            budget=args.budget)
    d = outcome.to_dict()
    d["groups"] = names
    _emit_text(json.dumps(d, indent=2, sort_keys=True), args.out)
    return EXIT_OK


def _sim_config(args, **extra) -> SimConfig:
    return SimConfig(group_sizes=_sizes(args.sizes), p=args.p, weights=_weights(args), null=args.null,
                     R=args.R, alpha=args.alpha, seed=args.seed, mode=args.mode, B=args.B, **extra)


def _direction(args, K: int):
    loc = np.zeros(K)
    scl = np.zeros(K)
    loc[-1] = args.location
    scl[-1] = args.scale
    return {"location": loc, "scale": scl}


def run_calibrate(args) -> int:
    cfg = _sim_config(args)
    res = calibrate_null(cfg, comparators=("glr",))
    row = {"N": cfg.N, "p": cfg.p, "K": cfg.K, "null": cfg.null, "weights": cfg.weights, **res.row()}
    _emit_rows([row], args.out)
    return EXIT_OK


def run_power(args) -> int:
    K = len(_sizes(args.sizes))
    cfg = _sim_config(args, **_direction(args, K))
    report = power_curve(cfg, _floats(args.effects))
    _emit_rows(list(report.rows()), args.out)
    return EXIT_OK


def run_efficiency(args) -> int:
    K = len(_sizes(args.sizes))
    cfg = _sim_config(args, **_direction(args, K))
    rep = efficiency_report(cfg, target=args.target)
    row = {"N": cfg.N, "p": cfg.p, "K": cfg.K, "weights": cfg.weights, "R": rep["R"],
           "multiplier": rep["multiplier"], "analytic": rep["analytic"]}
    for k, v in rep["rates"].items():
        row[f"{k}_rate"] = v
        row[f"{k}_se"] = rep["se"][k]
    _emit_rows([row], args.out)
    return EXIT_OK


def run_figure(args) -> int:
    out_dir = args.out or "."
    os.makedirs(out_dir, exist_ok=True)
    alphas = np.linspace(0.001, 0.2, args.points)
    paths = []
    for mu, sig in PAPER_PAIRS:
        curves = joint_vs_bonferroni(mu, sig, alphas)
        rows = [{"alpha": float(a), "joint_power": float(j), "bonferroni_power": float(b)}
                for a, j, b in zip(curves["alpha"], curves["joint"], curves["bonferroni"])]
        path = os.path.join(out_dir, f"joint_vs_bonferroni_mu{mu}_sigma{sig}.csv")
        write_csv(path, rows, ["alpha", "joint_power", "bonferroni_power"])
        paths.append(path)
    sys.stdout.write("\n".join(paths) + "\n")
    return EXIT_OK


def run_benchmark(args) -> int:
    Ns = [int(x) for x in _floats(args.N)] if args.N else [2**e for e in range(16, 21)]
    rows = [{"N": N, "p": args.p, "seconds": t} for N, t in runtime_profile(Ns, args.p, repeats=args.repeats,
                                                                             seed=args.seed)]
    _emit_rows(rows, args.out, ["N", "p", "seconds"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser


def _common(p: argparse.ArgumentParser):
    p.add_argument("--weights", default=None,
                   help="mann_whitney | van_der_waerden | siegel_tukey | mood | klotz | model:<family> "
                        "| stack:<a>+<b> | proj:<signal>/<nuisance> (default van_der_waerden)")
    p.add_argument("--family", default=None,
                   choices=("gaussian_location", "gaussian_location_scale", "logistic_location"),
                   help="use the adaptive weight of this model family")
    p.add_argument("--mode", default="asymptotic", choices=MODES)
    p.add_argument("--B", type=int, default=9999, help="permutation draws")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output path (default stdout)")


def _sim(p: argparse.ArgumentParser, R: int):
    p.add_argument("--sizes", default="100,100", help="comma-separated group sizes")
    p.add_argument("--p", type=int, default=1, help="dimension")
    p.add_argument("--null", default="gaussian", choices=NULLS)
    p.add_argument("--R", type=int, default=R, help="replications")
    p.add_argument("--alpha", type=float, default=0.05)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="multirank", description="Multivariate linear rank tests.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, helptext in (("test", "two-sample test"), ("ksample", "K-sample test")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("inputs", nargs="+", help="CSV files with a header row")
        p.add_argument("--group-col", default=None, help="column holding group labels")
        p.add_argument("--budget", type=int, default=DEFAULT_BUDGET,
                       help="largest subset count enumerated in exact mode")
        _common(p)

    p = sub.add_parser("calibrate", help="null rejection rate")
    _common(p)
    _sim(p, 2000)

    for name, helptext in (("power", "local power curve"), ("efficiency", "rank test vs likelihood ratio")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        _sim(p, 1000)
        p.add_argument("--location", type=float, default=1.0,
                       help="local location effect of the last group (times 1/sqrt(N))")
        p.add_argument("--scale", type=float, default=0.0,
                       help="local scale effect of the last group (times 1/sqrt(N))")
        if name == "power":
            p.add_argument("--effects", default="0,1,2,3,4", help="multipliers of the local effects")
        else:
            p.add_argument("--target", type=float, default=0.6, help="analytic power to tune to")

    p = sub.add_parser("figure", help="joint vs Bonferroni power curves")
    p.add_argument("--points", type=int, default=200, help="alpha grid size over [0.001, 0.2]")
    p.add_argument("--out", default=None, help="output directory (default .)")

    p = sub.add_parser("bench", help="rank-map timings")
    p.add_argument("--N", default=None, help="comma-separated sizes (default 2^16..2^20)")
    p.add_argument("--p", type=int, default=4)
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    return parser


_HANDLERS = {
    "test": lambda a: run_test(a, k_sample=False),
    "ksample": lambda a: run_test(a, k_sample=True),
    "calibrate": run_calibrate,
    "power": run_power,
    "efficiency": run_efficiency,
    "figure": run_figure,
    "bench": run_benchmark,
}

_USAGE_ERRORS = (DataError, InvalidArgumentError, DomainError, DegenerateSampleError,
                 EvaluationError, RankDeficiencyError, BudgetExceededError)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    try:
        return _HANDLERS[args.command](args)
    except _USAGE_ERRORS as exc:
        sys.stderr.write(f"multirank: error: {exc}\n")
        return EXIT_USAGE
    except (MultirankError, ArithmeticError, np.linalg.LinAlgError) as exc:
        sys.stderr.write(f"multirank: numerical failure: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
