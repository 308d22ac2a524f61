"""Command-line front end: ``spinlab run|validate|fit|list-protocols``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis as an
from .config import ConfigError, bundled_config, load_config, schema_text
from .engine import SweepResult
from .protocols import PROTOCOLS, RunOutput, SPECIAL_FITS, env_threads, execute, fit_curve, plan
from .svg import line_plot

EXIT_OK, EXIT_CONFIG, EXIT_FIT, EXIT_IO = 0, 2, 3, 4
SVG_MAX_POINTS = 4000


def _threads(arg: Optional[int]) -> Optional[int]:
    return arg if arg is not None else env_threads()


def _fit_overlay(curve, x_scale: float = 1.0):
    fit = curve.fit
    if fit is None or not fit.converged or fit.model in SPECIAL_FITS or fit.model == "power_law":
        return None
    try:
        m = an.model_function(fit.model)
    except KeyError:
        return None
    x = np.linspace(curve.data.axis.min(), curve.data.axis.max(), 400)
    return x, m(x * x_scale, **fit.params)


def write_outputs(out: RunOutput, cfg, out_dir: Path, svg: bool) -> list:
    out_dir.mkdir(parents=True, exist_ok=True)
    prefix = cfg["output"]["prefix"] or out.name
    single = len(out.curves) == 1
    written = []
    for c in out.curves:
        path = out_dir / (f"{prefix}.csv" if single else f"{prefix}_{c.label}.csv")
        c.data.write_csv(path, c.fit.to_block() if c.fit is not None else "")
        written.append(path)
    for label, data in out.extra.items():
        path = out_dir / f"{prefix}_{label}.csv"
        data.write_csv(path)
        written.append(path)
    lines = []
    for c in out.curves:
        if c.fit is not None:
            lines.append(f"[{c.label}]")
            lines.append(c.fit.to_block())
    if out.summary is not None:
        lines.append("[summary]")
        lines.append(out.summary.to_block())
    if lines:
        path = out_dir / f"{prefix}_fit.txt"
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    if svg:
        plots = [(c.label, c.data) for c in out.curves]
        if out.extra:
            plots = list(out.extra.items())
        curves, fits = [], []
        x_scale = 0.5 if cfg.protocol == "cpmg" else 1.0
        for label, data in plots:
            step = max(1, len(data.axis) // SVG_MAX_POINTS)
            curves.append((label, data.axis[::step], data.contrast[::step]))
        if not out.extra and not cfg["fit"]["baseline"]:
            fits = [_fit_overlay(c, x_scale) for c in out.curves]
        first = plots[0][1]
        path = out_dir / f"{prefix}.svg"
        path.write_text(line_plot(curves, out.name, f"{first.axis_name} ({first.axis_unit})", "contrast", fits))
        written.append(path)
    return written


def cmd_run(args) -> int:
    try:
        cfg = load_config(bundled_config(args.config))
        threads = _threads(args.threads)
        plan(cfg, args.seed, threads)  # fail fast before any propagation
        out = execute(cfg, args.seed, threads)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out_dir = Path(args.out if args.out is not None else cfg["output"]["dir"])
    try:
        written = write_outputs(out, cfg, out_dir, args.svg or cfg["output"]["svg"])
    except OSError as exc:
        print(f"error: cannot write output in {out_dir}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    for p in written:
        print(p)
    for c in out.curves:
        if c.fit is not None:
            shown = ", ".join(f"{k}={v:.6g}" for k, v in c.fit.params.items())
            print(f"{c.label}: {c.fit.model} {shown}")
    if out.summary is not None:
        print("summary: " + ", ".join(f"{k}={v:.6g}" for k, v in out.summary.params.items()))
    failed = out.failed_fits()
    if failed:
        print(f"error: fit did not converge for {', '.join(failed)}", file=sys.stderr)
        return EXIT_FIT
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = load_config(bundled_config(args.config))
        jobs = plan(cfg)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{args.config}: ok ({cfg.protocol}, {len(jobs)} curve{'s' if len(jobs) != 1 else ''})")
    return EXIT_OK


def _pairs(items) -> dict:
    out = {}
    for item in items or []:
        k, sep, v = item.partition("=")
        if not sep:
            raise ValueError(f"expected key=value, got {item!r}")
        out[k.strip()] = float(v)
    return out


def _ranges(items) -> tuple:
    out = []
    for item in items or []:
        lo, sep, hi = item.partition(":")
        if not sep:
            raise ValueError(f"expected lo:hi, got {item!r}")
        out.append((float(lo), float(hi)))
    return tuple(out)


def cmd_fit(args) -> int:
    try:
        data = SweepResult.read_csv(args.csv)
    except OSError as exc:
        print(f"error: cannot read {args.csv}: {exc.strerror}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {args.csv}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        if args.model not in SPECIAL_FITS:
            an.model_function(args.model)
        fixed, initial, baseline = _pairs(args.fixed), _pairs(args.initial), _ranges(args.baseline)
    except (KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    res = fit_curve(args.model, data, fixed, initial, baseline, args.x_scale, data.meta.get("protocol", ""))
    print(res.to_block())
    return EXIT_OK if res.converged else EXIT_FIT


def cmd_list(args) -> int:
    for name, p in PROTOCOLS.items():
        print(f"{name:14s} {p.description}")
    if args.schema:
        print()
        print(schema_text())
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spinlab", description="Spin-defect pulse-sequence simulator.")
    sub = ap.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a configuration and write CSV / fit / SVG")
    r.add_argument("config")
    r.add_argument("--seed", type=int)
    r.add_argument("--out", help="output directory (overrides [output] dir)")
    r.add_argument("--threads", type=int, help="worker threads (default: SPINLAB_THREADS or config)")
    r.add_argument("--svg", action="store_true", help="also write an SVG plot")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="dry-run validation of a configuration")
    v.add_argument("config")
    v.set_defaults(func=cmd_validate)

    f = sub.add_parser("fit", help="fit a model to an existing CSV")
    f.add_argument("csv")
    f.add_argument("--model", required=True, help="model id, e.g. monoexp, rabi, sinc2, gaussians7, fft")
    f.add_argument("--fixed", action="append", metavar="K=V")
    f.add_argument("--initial", action="append", metavar="K=V")
    f.add_argument("--baseline", action="append", metavar="LO:HI", help="signal-free region")
    f.add_argument("--x-scale", type=float, default=1.0, help="multiply the axis before fitting")
    f.set_defaults(func=cmd_fit)

    lp = sub.add_parser("list-protocols", help="list protocol ids")
    lp.add_argument("--schema", action="store_true", help="also print every config key")
    lp.set_defaults(func=cmd_list)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "threads", None) is not None and args.threads < 1:
            print("error: --threads must be >= 1", file=sys.stderr)
            return EXIT_CONFIG
        return args.func(args)
    except ValueError as exc:  # e.g. a malformed SPINLAB_THREADS
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
