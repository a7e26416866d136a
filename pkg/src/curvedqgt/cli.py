"""Command-line interface: grid scans, invariant checks, order comparisons.

Examples::

    qgt scan --model sym-toda --quantity component --indices kappa,lambda \\
        --vary k=0.5:10:80,lambda=0.05:5:80 --fix kappa=1,beta=1 --out g.csv
    qgt check --model sym-toda --points k=1,kappa=1,lambda=1,beta=1 \\
        --suite core
    qgt compare --model sym-toda --indices kappa,lambda \\
        --vary k=4:5:40 --fix kappa=1,lambda=0.01,beta=1 --out cmp.csv

Options may also come from a plain-text config file (one ``key = value``
per line, keys equal to the long flag names); explicit flags override the
file.  The ``QGT_THREADS`` environment variable caps the scan worker pool.
Exit codes: 0 on success, 1 on validation errors, 2 when a check suite
reports a numerical failure.
"""

from __future__ import annotations

import argparse
import math
import sys

import numpy as np

from .models import MODEL_NAMES, get_model
from .quadrature import QuadratureSettings
from .scan import (QUANTITIES, SUITES, ScanRequest, ScanValidationError,
                   run_check, run_scan)

__all__ = ["main"]


def _parse_assignments(text, what):
    out = {}
    if not text:
        return out
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        if "=" not in item:
            raise ScanValidationError(f"{what}: expected name=value, got "
                                      f"{item!r}")
        name, _, value = item.partition("=")
        try:
            out[name.strip()] = float(value)
        except ValueError:
            raise ScanValidationError(
                f"{what}: {item!r} has a non-numeric value") from None
    return out


def _parse_vary(text):
    entries = []
    if not text:
        return tuple(entries)
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        name, _, spec = item.partition("=")
        parts = spec.split(":")
        if len(parts) != 3:
            raise ScanValidationError(
                f"vary: expected name=min:max:count, got {item!r}")
        try:
            lo, hi = float(parts[0]), float(parts[1])
            count = int(parts[2])
        except ValueError:
            raise ScanValidationError(
                f"vary: non-numeric range in {item!r}") from None
        entries.append((name.strip(), lo, hi, count))
    return tuple(entries)


def _parse_points(text, model):
    points = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        values = _parse_assignments(chunk, "points")
        missing = set(model.param_names) - set(values)
        if missing:
            raise ScanValidationError(
                f"points: missing parameters {sorted(missing)} in {chunk!r}")
        points.append(np.array([values[p] for p in model.param_names]))
    if not points:
        raise ScanValidationError("points: no parameter points given")
    return points


def _read_config(path):
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ScanValidationError(
                    f"config: line {lineno} is not key = value: {raw!r}")
            key, _, value = line.partition("=")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


_CONFIG_KEYS = ("model", "quantity", "indices", "vary", "fix", "out",
                "suite", "points", "rel_tol", "abs_tol", "max_subdivisions",
                "truncation_tail_tol", "basis_size")


def _apply_config(args):
    if not getattr(args, "config", None):
        return args
    values = _read_config(args.config)
    unknown = set(values) - set(_CONFIG_KEYS)
    if unknown:
        raise ScanValidationError(
            f"config: unknown keys {sorted(unknown)}")
    for key, value in values.items():
        if getattr(args, key, None) in (None, False):
            if key in ("max_subdivisions", "basis_size"):
                value = int(value)
            elif key in ("rel_tol", "abs_tol", "truncation_tail_tol"):
                value = float(value)
            setattr(args, key, value)
    return args


def _settings_from(args):
    kwargs = {}
    if args.rel_tol is not None:
        kwargs["rel_tol"] = float(args.rel_tol)
    if args.abs_tol is not None:
        kwargs["abs_tol"] = float(args.abs_tol)
    if args.max_subdivisions is not None:
        kwargs["max_subdivisions"] = int(args.max_subdivisions)
    if args.truncation_tail_tol is not None:
        kwargs["truncation_tail_tol"] = float(args.truncation_tail_tol)
    return QuadratureSettings(**kwargs)


def _add_common(sub):
    sub.add_argument("--model", choices=MODEL_NAMES, default=None,
                     help="model system")
    sub.add_argument("--config", default=None,
                     help="config file with key = value lines")
    sub.add_argument("--rel-tol", dest="rel_tol", default=None)
    sub.add_argument("--abs-tol", dest="abs_tol", default=None)
    sub.add_argument("--max-subdivisions", dest="max_subdivisions",
                     default=None)
    sub.add_argument("--truncation-tail-tol", dest="truncation_tail_tol",
                     default=None)


def _add_grid(sub):
    sub.add_argument("--indices", default=None,
                     help="parameter (pair) selecting the tensor entry")
    sub.add_argument("--vary", default=None,
                     help="varied parameters: name=min:max:count[,...]")
    sub.add_argument("--fix", default=None,
                     help="fixed parameters: name=value[,...]")
    sub.add_argument("--out", default=None, help="output CSV path")
    sub.add_argument("--emit-plot", action="store_true",
                     help="write a gnuplot script next to the CSV")


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="qgt",
        description="Quantum geometric tensor on parameter-dependent curved "
                    "configuration spaces")
    subs = parser.add_subparsers(dest="command", required=True)

    scan = subs.add_parser("scan", help="evaluate a quantity over a grid")
    _add_common(scan)
    _add_grid(scan)
    scan.add_argument("--quantity", choices=QUANTITIES, default=None)

    check = subs.add_parser("check", help="run an invariant suite")
    _add_common(check)
    check.add_argument("--points", default=None,
                       help="parameter points: k=..,kappa=..[;k=..,...]")
    check.add_argument("--suite", choices=SUITES, default=None)
    check.add_argument("--basis-size", dest="basis_size", default=None,
                       help="truncation for the zanardi suite (default 20)")

    compare = subs.add_parser(
        "compare", help="analytic vs truncated-coupling orders (sym-toda)")
    _add_common(compare)
    _add_grid(compare)
    compare.add_argument("--quantity", choices=("component", "det"),
                         default=None)
    return parser


def _cmd_scan(args):
    request = ScanRequest(
        model=args.model or "",
        quantity=args.quantity or "component",
        vary=_parse_vary(args.vary),
        fixed=_parse_assignments(args.fix, "fix"),
        indices=tuple(s.strip() for s in (args.indices or "").split(",")
                      if s.strip()),
        settings=_settings_from(args),
        output=args.out or "scan.csv",
        emit_plot=bool(args.emit_plot),
    )
    path = run_scan(request)
    print(f"wrote {path}")
    return 0


def _cmd_compare(args):
    args.quantity = args.quantity or "component"
    request = ScanRequest(
        model=args.model or "sym-toda",
        quantity="compare-orders",
        vary=_parse_vary(args.vary),
        fixed=_parse_assignments(args.fix, "fix"),
        indices=tuple(s.strip() for s in (args.indices or "").split(",")
                      if s.strip()),
        settings=_settings_from(args),
        output=args.out or "compare.csv",
        emit_plot=bool(args.emit_plot),
    )
    path = run_scan(request)
    print(f"wrote {path}")
    return 0


def _cmd_check(args):
    if not args.model:
        raise ScanValidationError("model: --model is required")
    model = get_model(args.model)
    points = _parse_points(args.points or "", model)
    suite = args.suite or "core"
    truncation = int(args.basis_size) if args.basis_size else 20
    results = run_check(args.model, points, suite,
                        settings=_settings_from(args), truncation=truncation)
    failures = 0
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        failures += 0 if r.passed else 1
        point = ",".join(f"{n}={v:g}" for n, v in
                         zip(model.param_names, r.point))
        tol = "-" if (isinstance(r.tolerance, float)
                      and math.isnan(r.tolerance)) else f"{r.tolerance:.3e}"
        val = "-" if (isinstance(r.value, float)
                      and math.isnan(r.value)) else f"{r.value:.6e}"
        line = f"{status} {r.suite}.{r.name} point[{point}] value={val} " \
               f"tol={tol}"
        if r.info:
            line += f" info[{r.info}]"
        print(line)
    print(f"{len(results) - failures}/{len(results)} checks passed")
    return 2 if failures else 0


def main(argv=None):
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config(args)
        if args.command == "scan":
            return _cmd_scan(args)
        if args.command == "compare":
            return _cmd_compare(args)
        return _cmd_check(args)
    except ScanValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
