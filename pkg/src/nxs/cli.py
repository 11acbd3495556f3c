"""Command-line front end.

Subcommands: run, validate, bench, train, plot. Reports are line-oriented
key=value text so scripts can parse them without a JSON reader. Exit codes:
0 success, 2 file/parse problems, 3 validation or construction problems,
4 a node failure at runtime. NXS_LOG sets the log level (debug, info, ...).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import registry
from .dsl import build_pipeline, parse_pipeline
from .errors import NxsError, PipelineFileError
from .graph import Pipeline, run, validate_pipeline

log = logging.getLogger("nxs.cli")

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INVALID = 3
EXIT_RUNTIME = 4


def _configure_logging() -> None:
    level = os.environ.get("NXS_LOG", "warning").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")


def _fail(code: int, message: str) -> int:
    print(f"error={message}", file=sys.stderr)
    return code


def _emit(key, value) -> None:
    print(f"{key}={value}")


def _load_pipeline(path: str):
    """Returns (exit_code, pipeline); pipeline is None when the code is nonzero."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        return _fail(EXIT_PARSE, f"cannot read {path}: {exc}"), None
    try:
        spec = parse_pipeline(text)
    except PipelineFileError as exc:
        return _fail(EXIT_PARSE, str(exc)), None
    try:
        pipeline = build_pipeline(spec)
    except PipelineFileError as exc:
        return _fail(EXIT_PARSE, str(exc)), None
    except Exception as exc:
        return _fail(EXIT_INVALID, f"node construction failed: {exc}"), None
    return EXIT_OK, pipeline


def _print_validation(report) -> None:
    _emit("errors", len(report.errors))
    for i, issue in enumerate(report.errors, 1):
        _emit(f"error.{i}", issue)
    _emit("warnings", len(report.warnings))
    for i, issue in enumerate(report.warnings, 1):
        _emit(f"warning.{i}", issue)


def _print_run_report(report) -> None:
    _emit("steps", report.step_count)
    _emit("elapsed_wall_s", f"{report.elapsed_wall:.6f}")
    _emit("mean_step_ms", f"{report.mean_step * 1e3:.3f}")
    _emit("p95_step_ms", f"{report.percentile_step(95) * 1e3:.3f}")
    _emit("max_step_ms", f"{report.max_step * 1e3:.3f}")
    _emit("overruns", report.overruns)
    _emit("overrun_rate", f"{report.overrun_rate:.6f}")
    for node, counters in report.node_counters.items():
        for key, value in sorted(counters.items()):
            _emit(f"counter.{node}.{key}", value)


def cmd_run(args) -> int:
    code, pipeline = _load_pipeline(args.pipeline)
    if pipeline is None:
        return code
    report = validate_pipeline(pipeline)
    if not report.ok:
        _print_validation(report)
        return EXIT_INVALID
    run_report = run(pipeline, duration=args.duration, max_steps=args.steps,
                     paced=not args.accelerated)
    _print_run_report(run_report)
    if run_report.failure is not None:
        print(f"error={run_report.failure}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_validate(args) -> int:
    code, pipeline = _load_pipeline(args.pipeline)
    if pipeline is None:
        return code
    report = validate_pipeline(pipeline)
    _print_validation(report)
    _emit("valid", "true" if report.ok else "false")
    return EXIT_OK if report.ok else EXIT_INVALID


def reference_pipeline() -> Pipeline:
    """Built-in benchmark graph: 64 channels at 512 Hz through a bandpass,
    common average reference, 1 s epochs every 0.25 s and a PSD estimate."""
    from .analysis import PsdWelch
    from .epoching import TimeBasedEpoching
    from .filters import ButterFilter
    from .generate import Generator
    from .spatial import CommonAverageReference

    pipeline = Pipeline()
    source = Generator("source", mode="random", channels=64, fs=512.0, seed=7)
    band = ButterFilter("band", lowcut=8.0, highcut=12.0, order=4)
    car = CommonAverageReference("car")
    epochs = TimeBasedEpoching("epochs", duration=1.0, interval=0.25)
    psd = PsdWelch("psd", segment_length=256)
    pipeline.add(source)
    pipeline.add(band, inputs=source)
    pipeline.add(car, inputs=band)
    pipeline.add(epochs, inputs=car)
    pipeline.add(psd, inputs=epochs)
    return pipeline


def _source_samples(report, pipeline) -> int:
    sources = [n.name for n in pipeline.nodes if not n.inputs]
    return sum(report.node_counters.get(name, {}).get("out.samples", 0)
               for name in sources)


def cmd_bench(args) -> int:
    if args.pipeline:
        code, pipeline = _load_pipeline(args.pipeline)
        if pipeline is None:
            return code
    else:
        pipeline = reference_pipeline()
    if args.duration <= 0:
        _emit("steps", 0)
        _emit("note", "duration 0, nothing measured")
        return EXIT_OK
    report = validate_pipeline(pipeline)
    if not report.ok:
        _print_validation(report)
        return EXIT_INVALID
    run_report = run(pipeline, duration=args.duration, paced=True)
    _emit("steps", run_report.step_count)
    _emit("elapsed_wall_s", f"{run_report.elapsed_wall:.6f}")
    _emit("mean_step_ms", f"{run_report.mean_step * 1e3:.3f}")
    _emit("p95_step_ms", f"{run_report.percentile_step(95) * 1e3:.3f}")
    _emit("max_step_ms", f"{run_report.max_step * 1e3:.3f}")
    _emit("overrun_rate", f"{run_report.overrun_rate:.6f}")
    samples = _source_samples(run_report, pipeline)
    rate = samples / run_report.elapsed_wall if run_report.elapsed_wall > 0 else 0.0
    _emit("samples_per_s", f"{rate:.1f}")
    if run_report.failure is not None:
        print(f"error={run_report.failure}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_train(args) -> int:
    from .fileio import read_csv_table
    from .lda import lda_fit, lda_predict, model_save

    try:
        times, names, table, labels = read_csv_table(args.features)
    except (OSError, ValueError, NxsError) as exc:
        return _fail(EXIT_PARSE, f"cannot read {args.features}: {exc}")

    column = args.label_column
    if column == "label":
        if labels is None:
            return _fail(EXIT_PARSE, "no label column in the CSV")
        rows, row_labels = table, list(labels)
    elif column in names:
        idx = names.index(column)
        keep = [i for i in range(len(names)) if i != idx]
        rows = table[:, keep]
        row_labels = [_format_label(v) for v in table[:, idx]]
        names = tuple(n for i, n in enumerate(names) if i != idx)
    else:
        return _fail(EXIT_PARSE, f"label column {column!r} not in the CSV")

    labeled = [(row, lbl) for row, lbl in zip(rows, row_labels) if lbl != ""]
    if not labeled:
        return _fail(EXIT_PARSE, "no labeled rows to train on")
    data = np.vstack([row for row, _ in labeled])
    targets = [lbl for _, lbl in labeled]
    try:
        model = lda_fit(data, targets, feature_order=names)
    except NxsError as exc:
        return _fail(EXIT_INVALID, str(exc))
    hits = sum(1 for row, lbl in labeled if lda_predict(model, row) == lbl)
    model_save(model, args.out)
    _emit("rows", len(labeled))
    _emit("classes", ",".join(model.labels))
    _emit("accuracy", f"{hits / len(labeled):.4f}")
    _emit("model", args.out)
    return EXIT_OK


def _format_label(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else repr(float(value))


_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
            "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf")


def _svg_plot(times, names, table, selected) -> str:
    width, height = 960, 540
    left, right, top, bottom = 70, 20, 20, 50
    plot_w = width - left - right
    plot_h = height - top - bottom
    t0, t1 = float(times.min()), float(times.max())
    if t1 <= t0:
        t1 = t0 + 1.0
    sub = table[:, [names.index(n) for n in selected]]
    v0, v1 = float(sub.min()), float(sub.max())
    if v1 <= v0:
        v0, v1 = v0 - 1.0, v1 + 1.0

    def sx(t):
        return left + (t - t0) / (t1 - t0) * plot_w

    def sy(v):
        return top + (v1 - v) / (v1 - v0) * plot_h

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<line x1="{left}" y1="{top + plot_h}" x2="{left + plot_w}" '
             f'y2="{top + plot_h}" stroke="black"/>',
             f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + plot_h}" '
             f'stroke="black"/>']
    for frac in (0.0, 0.25, 0.5, 0.75, 1.0):
        t = t0 + frac * (t1 - t0)
        v = v0 + frac * (v1 - v0)
        parts.append(f'<text x="{sx(t):.1f}" y="{height - 28}" font-size="12" '
                     f'text-anchor="middle">{t:.3g}</text>')
        parts.append(f'<text x="{left - 8}" y="{sy(v):.1f}" font-size="12" '
                     f'text-anchor="end" dominant-baseline="middle">{v:.3g}</text>')
    parts.append(f'<text x="{left + plot_w / 2:.0f}" y="{height - 8}" '
                 f'font-size="14" text-anchor="middle">time (s)</text>')
    parts.append(f'<text x="16" y="{top + plot_h / 2:.0f}" font-size="14" '
                 f'text-anchor="middle" transform="rotate(-90 16 '
                 f'{top + plot_h / 2:.0f})">value</text>')
    for i, name in enumerate(selected):
        color = _PALETTE[i % len(_PALETTE)]
        column = table[:, names.index(name)]
        points = " ".join(f"{sx(t):.2f},{sy(v):.2f}" for t, v in zip(times, column))
        parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" '
                     f'points="{points}"/>')
        parts.append(f'<text x="{left + plot_w - 6}" y="{top + 16 + 16 * i}" '
                     f'font-size="12" text-anchor="end" fill="{color}">{name}</text>')
    parts.append("</svg>")
    return "\n".join(parts)


def cmd_plot(args) -> int:
    from .fileio import read_csv_table

    try:
        times, names, table, _ = read_csv_table(args.csv)
    except (OSError, ValueError, NxsError) as exc:
        return _fail(EXIT_PARSE, f"cannot read {args.csv}: {exc}")
    if table.size == 0:
        return _fail(EXIT_PARSE, f"{args.csv} has no data rows")
    if args.channels:
        selected = [c.strip() for c in args.channels.split(",") if c.strip()]
        unknown = [c for c in selected if c not in names]
        if unknown:
            return _fail(EXIT_PARSE, f"unknown channels: {', '.join(unknown)}")
    else:
        selected = list(names)
    svg = _svg_plot(times, names, table, selected)
    Path(args.out).write_text(svg, encoding="utf-8")
    _emit("channels", ",".join(selected))
    _emit("points", len(times))
    _emit("svg", args.out)
    return EXIT_OK


def _catalogue_text() -> str:
    registry.ensure_builtin()
    lines = ["node kinds:"]
    for kind, doc, params in registry.catalogue():
        rendered = ", ".join(p.describe() for p in params)
        lines.append(f"  {kind}({rendered})")
        if doc:
            lines.append(f"      {doc}")
    return "\n".join(lines)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nxs",
        description="Real-time biosignal pipeline engine.",
        epilog=_catalogue_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute a pipeline file")
    p_run.add_argument("pipeline")
    p_run.add_argument("--duration", type=float, default=None,
                       help="stop after this many seconds of pipeline time")
    p_run.add_argument("--steps", type=int, default=None,
                       help="stop after this many loop steps")
    p_run.add_argument("--accelerated", action="store_true",
                       help="virtual clock, no sleeping (as fast as possible)")
    p_run.set_defaults(func=cmd_run)

    p_val = sub.add_parser("validate", help="check a pipeline file without running")
    p_val.add_argument("pipeline")
    p_val.set_defaults(func=cmd_validate)

    p_bench = sub.add_parser("bench", help="measure loop latency and throughput")
    p_bench.add_argument("pipeline", nargs="?", default=None,
                         help="pipeline file (default: built-in reference graph)")
    p_bench.add_argument("--duration", type=float, default=10.0)
    p_bench.set_defaults(func=cmd_bench)

    p_train = sub.add_parser("train", help="fit a discriminant model from a feature CSV")
    p_train.add_argument("features")
    p_train.add_argument("--label-column", default="label")
    p_train.add_argument("--out", default="model.json")
    p_train.set_defaults(func=cmd_train)

    p_plot = sub.add_parser("plot", help="render a logged CSV to an SVG")
    p_plot.add_argument("csv")
    p_plot.add_argument("--out", default="plot.svg")
    p_plot.add_argument("--channels", default="",
                        help="comma-separated channel names (default: all)")
    p_plot.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except KeyboardInterrupt:
        return 130


if __name__ == "__main__":
    sys.exit(main())
