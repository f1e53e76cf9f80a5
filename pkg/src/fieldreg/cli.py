"""Command-line entry point: simulate, register, evaluate, report.

Exit codes: 0 on success, 1 for bad input (files, configs, templates),
2 for numerical failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

from .errors import FieldRegError, InputError, NumericalError
from .field_model import load_template
from .io import (
    DetectionFile,
    FrameDetections,
    PoseFile,
    PoseRecord,
    load_pipeline_config,
    load_simulation_config,
    read_detections,
    read_poses,
    write_detections,
    write_poses,
    write_text,
)
from .metrics import METRICS, MetricReport, evaluate_frame, summary_table
from .simulator import simulate
from .temporal import REGISTERED, PipelineConfig, SequenceRegistrar

log = logging.getLogger("fieldreg")

EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL = 0, 1, 2


def cmd_simulate(args) -> int:
    cfg = load_simulation_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    template = load_template(cfg.template)
    truth, dets = simulate(template, cfg.trajectory, cfg.noise, cfg.players, cfg.seed)
    out = Path(args.out)
    frames = tuple(
        FrameDetections(fr.index, fr.timestamp, tuple(d), fr.players) for fr, d in zip(truth.frames, dets)
    )
    write_detections(out / "detections.jsonl", DetectionFile(truth.width, truth.height, truth.fps, cfg.template, frames))
    records = tuple(PoseRecord(fr.index, REGISTERED, False, fr.intrinsics, fr.pose) for fr in truth.frames)
    write_poses(out / "truth.jsonl", PoseFile(truth.width, truth.height, cfg.template, records))
    print(f"wrote {len(frames)} frames to {out / 'detections.jsonl'} and {out / 'truth.jsonl'}")
    return EXIT_OK


def _pipeline_config(args) -> PipelineConfig:
    cfg = load_pipeline_config(args.config) if args.config else PipelineConfig()
    if args.no_filter:
        cfg = dataclasses.replace(cfg, use_filter=False)
    if args.no_players:
        cfg = dataclasses.replace(cfg, use_players=False)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg,
            ransac=dataclasses.replace(cfg.ransac, seed=args.seed),
            filter=dataclasses.replace(cfg.filter, seed=args.seed),
        )
    return cfg


def cmd_register(args) -> int:
    df = read_detections(args.detections)
    template = load_template(args.template or df.template)
    known = set(template.keypoints)
    unknown = sorted({d.id for fr in df.frames for d in fr.detections if not d.is_player and d.id not in known})
    if unknown:
        raise InputError(f"detections reference keypoint ids missing from template {template.name!r}: {unknown}")
    cfg = _pipeline_config(args)
    reg = SequenceRegistrar(template, (df.width, df.height), cfg)
    records = []
    t0 = time.perf_counter()
    for fr in df.frames:
        est = reg.step(fr.detections, fr.players_world)
        records.append(PoseRecord(fr.frame, est.status, est.reinitialized, est.intrinsics, est.pose))
    elapsed = time.perf_counter() - t0
    write_poses(args.out, PoseFile(df.width, df.height, template.name, tuple(records)))
    fps = len(records) / elapsed if elapsed > 0 else float("inf")
    counts = {s: sum(r.status == s for r in records) for s in ("registered", "coasting", "unregistered")}
    print(
        f"registered {len(records)} frames in {elapsed:.2f} s ({fps:.1f} frames/s); "
        + ", ".join(f"{k} {v}" for k, v in counts.items())
    )
    return EXIT_OK


def cmd_evaluate(args) -> int:
    est = read_poses(args.estimate)
    gt = read_poses(args.truth)
    if [r.frame for r in est.records] != [r.frame for r in gt.records]:
        raise InputError("estimate and ground-truth pose files cover different frames")
    template = load_template(args.template or gt.template)
    size = (args.width or gt.width, args.height or gt.height)
    frames = []
    for e, g in zip(est.records, gt.records):
        if g.pose is None:
            raise InputError(f"ground truth has no pose for frame {g.frame}")
        frames.append(evaluate_frame(g.frame, g.intrinsics, g.pose, e.intrinsics, e.pose, template, size, args.grid_step))
    report = MetricReport(frames, args.label or Path(args.estimate).stem)
    write_text(args.out, report.to_text())
    print(summary_table([report]), end="")
    return EXIT_OK


def _plot_curves(reports, out: Path) -> list[Path]:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed hash salt and no date stamp keep the SVG byte-stable
    plt.rcParams["svg.hashsalt"] = "fieldreg"
    plt.rcParams["svg.fonttype"] = "none"
    written = []
    for m in METRICS:
        fig, ax = plt.subplots(figsize=(5, 4))
        for i, r in enumerate(reports):
            x, y = r.curve(m)
            ax.step(x, y, where="post", label=r.label or f"report{i}")
        ax.set_xlabel(f"1 - {m}" if m.startswith("iou") else m)
        ax.set_ylabel("fraction of frames")
        ax.set_ylim(0, 1.02)
        ax.legend(loc="lower right")
        path = out / f"curve_{m}.svg"
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
        written.append(path)
    return written


def cmd_report(args) -> int:
    reports = []
    for p in args.reports:
        try:
            text = Path(p).read_text()
        except OSError as exc:
            raise InputError(f"cannot read {p}: {exc}") from exc
        r = MetricReport.from_text(text)
        if not r.frames:
            raise InputError(f"{p}: empty report")
        if not r.label:
            r.label = Path(p).stem
        reports.append(r)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    table = summary_table(reports)
    write_text(out / "summary.txt", table)
    rows = ["report\tmetric\terror\tfraction"]
    for r in reports:
        for m in METRICS:
            x, y = r.curve(m)
            rows += [f"{r.label}\t{m}\t{a!r}\t{b!r}" for a, b in zip(x.tolist(), y.tolist())]
    write_text(out / "curves.tsv", "\n".join(rows))
    _plot_curves(reports, out)
    print(table, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fieldreg", description="Sports-field camera registration toolkit")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="generate synthetic detections and ground-truth poses")
    s.add_argument("config", help="simulation config (JSON)")
    s.add_argument("--out", required=True, help="output directory")
    s.add_argument("--seed", type=int, default=None, help="override the config seed")
    s.set_defaults(func=cmd_simulate)

    r = sub.add_parser("register", help="estimate per-frame camera parameters")
    r.add_argument("detections", help="detection file (JSONL)")
    r.add_argument("--template", default=None, help="template name or path (default: from the detection header)")
    r.add_argument("--config", default=None, help="pipeline config (JSON)")
    r.add_argument("--out", required=True, help="output pose file")
    r.add_argument("--no-filter", action="store_true", help="per-frame estimates only")
    r.add_argument("--no-players", action="store_true", help="ignore player detections")
    r.add_argument("--seed", type=int, default=None, help="override RANSAC and filter seeds")
    r.set_defaults(func=cmd_register)

    e = sub.add_parser("evaluate", help="score estimated poses against ground truth")
    e.add_argument("estimate", help="estimated pose file")
    e.add_argument("truth", help="ground-truth pose file")
    e.add_argument("--template", default=None)
    e.add_argument("--width", type=int, default=None)
    e.add_argument("--height", type=int, default=None)
    e.add_argument("--grid-step", type=float, default=1.0, help="reprojection grid step in meters")
    e.add_argument("--label", default=None)
    e.add_argument("--out", required=True, help="metric report file (TSV)")
    e.set_defaults(func=cmd_evaluate)

    rp = sub.add_parser("report", help="cumulative error curves and a summary table")
    rp.add_argument("reports", nargs="+", help="metric report files")
    rp.add_argument("--out", required=True, help="output directory")
    rp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FieldRegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
