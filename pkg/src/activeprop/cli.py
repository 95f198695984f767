"""Command-line interface.

Subcommands: ``schedule``, ``partition``, ``simulate``, ``train``,
``ratio-exp``, ``eval``. Machine-readable outputs (CSV/JSON/JSONL) are
byte-reproducible for a fixed seed and config; report figures are rendered
next to them unless ``--no-figure`` is given. Flags override the config
file; the config file path may also come from ``ACTIVEPROP_CONFIG``.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import fileio
from .config import load_config
from .errors import ActivePropError
from .evaluation import evaluate
from .partition import generate
from .rng import derive_rng
from .schedule import active_budget, retained_fraction, stage_occupancy, stage_of
from .synth import build_dataset
from .training import predict_detections, ratio_experiment, train


def _fmt(value) -> str:
    if isinstance(value, str):
        return value
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return repr(float(value))


def _write_csv(path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def _replace_from_args(cfg, args: argparse.Namespace, mapping: dict[str, str]):
    updates = {}
    for attr, arg_name in mapping.items():
        value = getattr(args, arg_name, None)
        if value is not None:
            updates[attr] = value
    return dataclasses.replace(cfg, **updates) if updates else cfg


def _cmd_schedule(args: argparse.Namespace) -> int:
    run = load_config(args.config)
    sched = _replace_from_args(
        run.schedule,
        args,
        {"alpha": "alpha", "beta": "beta", "omega": "omega", "n_min": "nmin"},
    )
    steps = args.steps
    total = args.total
    thetas = np.linspace(0.0, 1.0, steps)
    rows = []
    fracs, budgets, stages = [], [], []
    for theta in thetas:
        frac = retained_fraction(sched, theta)
        budget = active_budget(sched, theta, total)
        stage = stage_of(sched, theta).value
        fracs.append(frac)
        budgets.append(budget)
        stages.append(stage)
        rows.append([theta, frac, budget, stage])
    _write_csv(args.out, ["theta", "gamma", "n_v", "stage"], rows)
    warm, transition, stable = stage_occupancy(sched, steps)
    print(
        f"schedule: {steps} rows -> {args.out} | occupancy warm={warm:.3f} "
        f"transition={transition:.3f} stable={stable:.3f}"
    )
    if not args.no_figure:
        from . import reporting

        figure_path = Path(args.out).with_suffix(".png")
        reporting.schedule_figure(thetas, fracs, budgets, stages, figure_path)
        print(f"figure -> {figure_path}")
    return 0


def _cmd_partition(args: argparse.Namespace) -> int:
    run = load_config(args.config)
    seed = args.seed if args.seed is not None else run.seed
    records_out = []
    for rec in fileio.read_snapshots(args.infile):
        result = generate(
            rec.proposals,
            rec.scores,
            rec.labels(),
            run.schedule,
            rec.theta,
            run.partition,
            derive_rng(seed, "partition", rec.image_id, 0, 0),
        )
        records_out.append(
            {
                "image_id": rec.image_id,
                "theta": rec.theta,
                "budget": int(result.budget),
                "quota_positive": int(result.n_pos),
                "quota_negative": int(result.n_neg),
                "pgts": [
                    {
                        "class_id": g.class_id,
                        "proposal_index": g.proposal_index,
                        "score": float(g.score),
                    }
                    for g in result.pgts
                ],
                "positives": [int(i) for i in result.positives],
                "negatives": [int(i) for i in result.negatives],
                "risks": [int(i) for i in result.risks],
                "active": [int(i) for i in result.active],
            }
        )
    fileio.write_json({"schema": 1, "seed": seed, "records": records_out}, args.out)
    print(f"partition: {len(records_out)} records -> {args.out}")
    return 0


def _cmd_simulate(args: argparse.Namespace) -> int:
    run = load_config(args.config)
    sim = _replace_from_args(
        run.simulator,
        args,
        {
            "train_scenes": "scenes",
            "test_scenes": "test_scenes",
            "proposals_per_scene": "proposals",
            "num_classes": "classes",
        },
    )
    seed = args.seed if args.seed is not None else run.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for split in ("train", "test"):
        world = build_dataset(sim, seed, split)
        fileio.write_scenes([w.scene for w in world], out_dir / f"scenes_{split}.jsonl")
        fileio.write_jsonl(
            (
                {
                    "image_id": w.scene.image_id,
                    "boxes": [b.to_list() for b in w.proposals.proposals.boxes],
                }
                for w in world
            ),
            out_dir / f"proposals_{split}.jsonl",
        )
        print(
            f"simulate: {len(world)} {split} scenes, "
            f"{sim.proposals_per_scene} proposals each -> {out_dir}"
        )
    return 0


def _cmd_train(args: argparse.Namespace) -> int:
    run = load_config(args.config)
    sim = _replace_from_args(
        run.simulator,
        args,
        {
            "train_scenes": "scenes",
            "test_scenes": "test_scenes",
            "proposals_per_scene": "proposals",
        },
    )
    trainer = _replace_from_args(
        run.trainer,
        args,
        {"steps": "steps", "batch_size": "batch_size", "branches": "branches"},
    )
    if args.opg is not None:
        trainer = dataclasses.replace(trainer, opg=args.opg == "on")
    seed = args.seed if args.seed is not None else run.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_world = build_dataset(sim, seed, "train")
    test_world = build_dataset(sim, seed, "test")
    model, log = train(
        [w.training_view() for w in train_world],
        sim.num_classes,
        run.schedule,
        run.partition,
        trainer,
        seed,
    )
    detections = predict_detections(model, [w.training_view() for w in test_world])
    report = evaluate(
        detections,
        [w.scene for w in test_world],
        run.eval.iou_thresh,
        run.eval.ap_mode,
    )
    fileio.write_jsonl(log, out_dir / "log.jsonl")
    fileio.write_detections(detections, out_dir / "detections.jsonl")
    fileio.write_json(report.to_dict(), out_dir / "eval.json")
    print(
        f"train: opg={'on' if trainer.opg else 'off'} steps={trainer.steps} "
        f"final_loss={log[-1]['loss_total']:.4f} test_map={report.mean_ap:.4f} "
        f"corloc={report.corloc:.4f} -> {out_dir}"
    )
    if not args.no_figure:
        from . import reporting

        reporting.training_figure(log, out_dir / "training.png")
    return 0


def _cmd_ratio_exp(args: argparse.Namespace) -> int:
    run = load_config(args.config)
    sim = _replace_from_args(
        run.simulator,
        args,
        {
            "train_scenes": "scenes",
            "test_scenes": "test_scenes",
            "proposals_per_scene": "proposals",
        },
    )
    trainer = run.trainer
    exp = run.ratio
    if args.ratios is not None:
        exp = dataclasses.replace(
            exp, ratios=tuple(float(r) for r in args.ratios.split(","))
        )
    if args.seeds is not None:
        exp = dataclasses.replace(
            exp, seeds=tuple(int(s) for s in args.seeds.split(","))
        )
    exp = _replace_from_args(
        exp,
        args,
        {
            "fixed_total": "fixed_total",
            "phase_one_steps": "phase1_steps",
            "phase_two_steps": "phase2_steps",
        },
    )
    seed = args.seed if args.seed is not None else run.seed
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    train_world = build_dataset(sim, seed, "train")
    test_world = build_dataset(sim, seed, "test")
    rows = ratio_experiment(
        train_world,
        test_world,
        sim.num_classes,
        exp,
        trainer,
        run.partition,
        run.schedule,
    )
    _write_csv(
        out_dir / "results.csv",
        ["ratio", "seed", "map"],
        [[row["ratio"], row["seed"], row["map"]] for row in rows],
    )
    means = []
    for ratio in exp.ratios:
        values = [row["map"] for row in rows if row["ratio"] == ratio]
        means.append(float(np.mean(values)))
    _write_csv(
        out_dir / "summary.csv",
        ["ratio", "mean_map"],
        [[ratio, mean] for ratio, mean in zip(exp.ratios, means)],
    )
    for ratio, mean in zip(exp.ratios, means):
        print(f"ratio {ratio:>5}: mean mAP {mean:.4f}")
    if not args.no_figure:
        from . import reporting

        reporting.ratio_figure(exp.ratios, means, out_dir / "ratio.png")
    return 0


def _cmd_eval(args: argparse.Namespace) -> int:
    run = load_config(args.config)
    detections = fileio.read_detections(args.detections)
    scenes = fileio.read_scenes(args.scenes)
    report = evaluate(detections, scenes, run.eval.iou_thresh, run.eval.ap_mode)
    fileio.write_json(report.to_dict(), args.out)
    print(f"eval: map={report.mean_ap:.4f} corloc={report.corloc:.4f} -> {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="activeprop",
        description="Active proposal set generation for weakly supervised detector training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file (or ACTIVEPROP_CONFIG)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--no-figure", action="store_true", help="skip PNG report figures")

    p = sub.add_parser("schedule", help="emit the budget schedule as CSV")
    common(p)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--beta", type=float, default=None)
    p.add_argument("--omega", type=float, default=None)
    p.add_argument("--nmin", type=int, default=None)
    p.add_argument("--total", type=int, default=2000, help="proposal pool size")
    p.add_argument("--steps", type=int, default=1000, help="grid points over [0, 1]")
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=_cmd_schedule)

    p = sub.add_parser("partition", help="partition snapshot records into sets")
    common(p)
    p.add_argument("--in", dest="infile", required=True, help="snapshot JSONL path")
    p.add_argument("--out", required=True, help="output JSON report path")
    p.set_defaults(func=_cmd_partition)

    p = sub.add_parser("simulate", help="generate the synthetic dataset files")
    common(p)
    p.add_argument("--scenes", type=int, default=None, help="train scene count")
    p.add_argument("--test-scenes", type=int, default=None)
    p.add_argument("--proposals", type=int, default=None, help="proposals per scene")
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="train the toy model on the synthetic world")
    common(p)
    p.add_argument("--opg", choices=("on", "off"), default=None, help="active sampling on/off")
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--branches", type=int, default=None)
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--test-scenes", type=int, default=None)
    p.add_argument("--proposals", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("ratio-exp", help="accuracy vs training proposal balance")
    common(p)
    p.add_argument("--ratios", default=None, help="comma-separated target ratios")
    p.add_argument("--seeds", default=None, help="comma-separated experiment seeds")
    p.add_argument("--fixed-total", type=int, default=None)
    p.add_argument("--phase1-steps", type=int, default=None, help="PGT-producer budget")
    p.add_argument("--phase2-steps", type=int, default=None, help="per-ratio retrain budget")
    p.add_argument("--scenes", type=int, default=None)
    p.add_argument("--test-scenes", type=int, default=None)
    p.add_argument("--proposals", type=int, default=None)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=_cmd_ratio_exp)

    p = sub.add_parser("eval", help="score a detection file against scenes")
    common(p)
    p.add_argument("--detections", required=True, help="detections JSONL path")
    p.add_argument("--scenes", required=True, help="scenes JSONL path")
    p.add_argument("--out", required=True, help="output JSON report path")
    p.set_defaults(func=_cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ActivePropError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entry_point() -> None:
    sys.exit(main())
