"""Command-line entry point: ``wphist transform|fit|infer|simulate``.

Exit codes: 0 ok, 1 other package error, 2 shape, 3 data, 4 persistence,
5 configuration / invalid parameter, 6 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import platform
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .errors import (
    ContractViolation,
    DataError,
    DecompositionError,
    InvalidParameterError,
    NumericalFailure,
    PersistenceError,
    ShapeError,
    WphistError,
)

log = logging.getLogger("wphist")

EXIT_CODES = [
    (ShapeError, 2),
    (DataError, 3),
    (ContractViolation, 3),
    (PersistenceError, 4),
    (InvalidParameterError, 5),
    (NumericalFailure, 6),
    (DecompositionError, 6),
    (WphistError, 1),
]

FIT_DEFAULTS = {
    "filter": "db3",
    "levels": 3,
    "retain": 0.25,
    "iterations": 2000,
    "burnin": 1000,
    "thin": 1,
    "seed": 0,
    "bf_exponent": "derived",
    "pi_update": "derived",
    "scan": "raster",
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # usage problems are configuration errors; 2 is reserved for shape errors
        self.print_usage(sys.stderr)
        self.exit(5, f"{self.prog}: error: {message}\n")


# -- I/O helpers --------------------------------------------------------------


def read_matrix(path, header=False) -> np.ndarray:
    """Comma-separated numeric matrix, one row per line; errors name the row and column."""
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = []
    width = None
    with fh:
        reader = csv.reader(fh)
        for lineno, row in enumerate(reader, start=1):
            if header and lineno == 1:
                continue
            if not row or all(not cell.strip() for cell in row):
                continue
            if width is None:
                width = len(row)
            elif len(row) != width:
                raise DataError(f"{path}: row {lineno} has {len(row)} columns, expected {width}")
            values = []
            for col, cell in enumerate(row, start=1):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise DataError(f"{path}: row {lineno}, column {col}: cannot parse {cell!r}") from None
            rows.append(values)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows)


def write_matrix(path, A) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        np.savetxt(path, np.atleast_2d(A), fmt="%.17g", delimiter=",")
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc
    return path


def write_json(path, obj) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    except OSError as exc:
        raise PersistenceError(f"cannot write {path}: {exc}") from exc
    return path


def write_manifest(out_dir, command, config) -> Path:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "created": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "python": platform.python_version(),
        "numpy": np.__version__,
    }
    return write_json(Path(out_dir) / "run_manifest.json", manifest)


def load_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise InvalidParameterError(f"cannot read config {path}: {exc}") from exc
    if path.suffix.lower() == ".toml":
        try:
            import tomllib
        except ImportError:
            raise InvalidParameterError("TOML configs need Python 3.11+; use JSON instead") from None
        try:
            cfg = tomllib.loads(text.decode("utf-8"))
        except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
            raise InvalidParameterError(f"invalid TOML in {path}: {exc}") from exc
    else:
        try:
            cfg = json.loads(text)
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise InvalidParameterError(f"invalid JSON in {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise InvalidParameterError(f"config {path} must hold an object at the top level")
    return cfg


def output_dir(args) -> Path:
    if args.out:
        return Path(args.out)
    return Path(os.environ.get("WPHIST_OUTPUT_DIR") or "wphist_output")


def parse_deltas(text) -> list:
    try:
        deltas = [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise InvalidParameterError(f"cannot parse delta list {text!r}") from None
    if not deltas:
        raise InvalidParameterError("empty delta list")
    for d in deltas:
        if not d > 0:
            raise InvalidParameterError(f"delta must be positive, got {d!r}")
    return deltas


def delta_tag(d: float) -> str:
    return f"{d:g}"


# -- commands -----------------------------------------------------------------


def cmd_transform(args) -> int:
    from .wavelets import PacketDecomposition, build_basis, dwpt, filter_from_name, idwpt

    filt = filter_from_name(args.filter)
    A = read_matrix(args.input, args.header)
    n = A.shape[1]
    levels = args.levels
    if n % 2**levels:
        raise ShapeError(f"signal length {n} is not divisible by 2**levels = {2**levels}")
    out = output_dir(args)
    stem = Path(args.input).stem
    if args.inverse:
        basis = build_basis(filt, levels, n)
        result = idwpt(PacketDecomposition(A, levels, n), basis)
        target = Path(args.output) if args.output else out / f"{stem}_signal.csv"
        write_matrix(target, result)
    else:
        decomp = dwpt(A, filt, levels)
        target = Path(args.output) if args.output else out / f"{stem}_wp.csv"
        write_matrix(target, decomp.coefficients)
        index = np.column_stack([np.arange(n), decomp.scale_of, decomp.location_of])
        sidecar = target.with_name(target.stem + "_index.csv")
        try:
            with open(sidecar, "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["column", "scale", "location"])
                w.writerows(index.tolist())
        except OSError as exc:
            raise PersistenceError(f"cannot write {sidecar}: {exc}") from exc
    write_manifest(
        target.parent,
        "transform",
        {"input": str(args.input), "output": str(target), "filter": filt.name, "levels": levels,
         "inverse": bool(args.inverse), "header": bool(args.header)},
    )
    print(target)
    return 0


def resolve_fit_config(args) -> dict:
    cfg = dict(FIT_DEFAULTS)
    if args.config:
        file_cfg = load_config(args.config)
        unknown = set(file_cfg) - set(FIT_DEFAULTS)
        if unknown:
            raise InvalidParameterError(f"unknown fit config keys: {sorted(unknown)}")
        cfg.update(file_cfg)
    for key in FIT_DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def cmd_fit(args) -> int:
    from .model import FunctionalDataset, build_design, standardize
    from .persistence import write_samples
    from .sampler import SamplerSettings, run
    from .wavelets import filter_from_name

    cfg = resolve_fit_config(args)
    try:
        settings = SamplerSettings(
            total_iterations=int(cfg["iterations"]),
            burn_in=int(cfg["burnin"]),
            thinning=int(cfg["thin"]),
            seed=int(cfg["seed"]),
            bf_exponent=cfg["bf_exponent"],
            pi_update=cfg["pi_update"],
            scan=cfg["scan"],
        )
    except (TypeError, ValueError) as exc:
        raise InvalidParameterError(str(exc)) from exc
    filt = filter_from_name(cfg["filter"])
    Y = read_matrix(args.y, args.header)
    X = read_matrix(args.x, args.header)
    data = FunctionalDataset(Y, X)
    std, record = standardize(data)
    design = build_design(std, filt, int(cfg["levels"]), float(cfg["retain"]), record)
    samples = run(design, settings)

    out = output_dir(args)
    write_samples(out / "samples.wph", samples)
    write_matrix(out / "beta_mean.csv", samples.beta_mean)
    write_matrix(out / "gamma_means.csv", samples.gamma_means)
    try:
        with open(out / "diagnostics.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(samples.diagnostic_columns)
            for row in samples.diagnostics:
                w.writerow([f"{v:.17g}" for v in row])
    except OSError as exc:
        raise PersistenceError(f"cannot write diagnostics: {exc}") from exc
    resolved = {**cfg, "y": str(args.y), "x": str(args.x), "header": bool(args.header),
                "hyperparameters": samples.meta["hyperparameters"], "design": samples.meta["design"]}
    write_manifest(out, "fit", resolved)
    print(out / "samples.wph")
    return 0


def cmd_infer(args) -> int:
    from .inference import bfdr, joint_band, metrics, pointwise_band
    from .persistence import read_samples

    deltas = parse_deltas(args.delta)
    alpha = float(args.alpha)
    if not 0 < alpha < 1:
        raise InvalidParameterError(f"alpha must lie in (0, 1), got {alpha!r}")
    samples = read_samples(args.samples)
    out = output_dir(args)
    write_matrix(out / "beta_mean.csv", samples.beta_mean)
    summary = {}
    for d in deltas:
        res = bfdr(samples, d, alpha)
        tag = delta_tag(d)
        write_matrix(out / f"pb_{tag}.csv", res.p_b)
        write_matrix(out / f"flags_{tag}.csv", res.flagged.astype(int))
        summary[tag] = {"phi_alpha": res.phi_alpha, "lambda": res.lambda_rank, "n_flagged": int(res.flagged.sum())}
    joint = joint_band(samples, alpha)
    point = pointwise_band(samples, alpha)
    write_matrix(out / "lower.csv", joint.lower)
    write_matrix(out / "upper.csv", joint.upper)
    write_matrix(out / "pointwise_lower.csv", point.lower)
    write_matrix(out / "pointwise_upper.csv", point.upper)
    write_json(out / "bfdr.json", {"alpha": alpha, "joint_q": joint.q_quantile, "deltas": summary})
    if args.truth:
        truth = read_matrix(args.truth, args.header)
        m = metrics(samples, truth, {"joint": joint, "pointwise": point})
        write_json(out / "metrics.json", m)
    write_manifest(
        out, "infer",
        {"samples": str(args.samples), "delta": deltas, "alpha": alpha,
         "truth": str(args.truth) if args.truth else None, "sample_meta": samples.meta},
    )
    print(out)
    return 0


def cmd_simulate(args) -> int:
    from .simulation import ExperimentGrid, run_experiment

    cfg = load_config(args.config) if args.config else {}
    if args.out:
        cfg["output_dir"] = str(args.out)
    elif "output_dir" not in cfg:
        cfg["output_dir"] = str(Path(os.environ.get("WPHIST_OUTPUT_DIR") or "wphist_output") / "simulation")
    try:
        grid = ExperimentGrid.from_dict(cfg)
    except (TypeError, ValueError) as exc:
        raise InvalidParameterError(f"invalid experiment grid: {exc}") from exc
    if args.jobs < 1:
        raise InvalidParameterError("--jobs must be >= 1")
    resolved = grid.to_dict()
    if args.dry_run:
        print(json.dumps({"grid": resolved, "cells": grid.cells()}, indent=2, sort_keys=True))
        return 0
    write_manifest(grid.output_dir, "simulate", {**resolved, "jobs": args.jobs, "keep_samples": args.keep_samples})
    rows = run_experiment(grid, jobs=args.jobs, keep_samples=args.keep_samples)
    for row in rows:
        print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in row.items()))
    print(Path(grid.output_dir) / "summary.csv")
    return 0


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="wphist", description="Wavelet-packet historical functional regression.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    common = _Parser(add_help=False)
    common.add_argument("--out", help="output directory (default: $WPHIST_OUTPUT_DIR or ./wphist_output)")
    common.add_argument("--header", action="store_true", help="skip one header line in input CSVs")

    t = sub.add_parser("transform", parents=[common], help="packet transform of CSV signals (one per row)")
    t.add_argument("input")
    t.add_argument("--filter", default="db3")
    t.add_argument("--levels", type=int, default=3)
    t.add_argument("--inverse", action="store_true", help="map packet coefficients back to signals")
    t.add_argument("-o", "--output", help="explicit output CSV path")
    t.set_defaults(func=cmd_transform)

    f = sub.add_parser("fit", parents=[common], help="fit the historical model to Y.csv / X.csv")
    f.add_argument("--y", required=True, help="outcome curves CSV")
    f.add_argument("--x", required=True, help="exposure curves CSV")
    f.add_argument("--config", help="JSON config with any of: " + ", ".join(FIT_DEFAULTS))
    f.add_argument("--filter")
    f.add_argument("--levels", type=int)
    f.add_argument("--retain", type=float)
    f.add_argument("--iterations", type=int)
    f.add_argument("--burnin", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--seed", type=int)
    f.add_argument("--bf-exponent", dest="bf_exponent", choices=["derived", "paper_literal"])
    f.add_argument("--pi-update", dest="pi_update", choices=["derived", "paper_literal"])
    f.add_argument("--scan", choices=["raster", "random"])
    f.set_defaults(func=cmd_fit)

    i = sub.add_parser("infer", parents=[common], help="BFDR flags, bands and metrics from a sample file")
    i.add_argument("samples")
    i.add_argument("--delta", default="0.5", help="comma-separated intensity thresholds")
    i.add_argument("--alpha", type=float, default=0.05)
    i.add_argument("--truth", help="true surface CSV (V x T) for metrics.json")
    i.set_defaults(func=cmd_infer)

    s = sub.add_parser("simulate", parents=[common], help="run a replicate simulation grid")
    s.add_argument("--config", help="experiment grid (JSON, or TOML on Python 3.11+)")
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--keep-samples", dest="keep_samples", action="store_true")
    s.add_argument("--dry-run", dest="dry_run", action="store_true")
    s.set_defaults(func=cmd_simulate)
    return p


def exit_code_for(exc: BaseException) -> int:
    for cls, code in EXIT_CODES:
        if isinstance(exc, cls):
            return code
    return 1


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="wphist: %(levelname)s: %(message)s",
    )
    try:
        return args.func(args)
    except WphistError as exc:
        print(f"wphist: error: {exc}", file=sys.stderr)
        return exit_code_for(exc)


if __name__ == "__main__":
    sys.exit(main())
