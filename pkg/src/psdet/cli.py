"""Command-line front door: train, eval, bench, visualize, export-dataset.

Configuration comes from defaults, overridden by an optional JSON config
file (strictly parsed: unknown keys abort), overridden by explicit flags.
Every command writes its artifacts under --out and is idempotent for a
fixed seed/config. Exit code is 0 iff the command completed; failures
print a single ``error: ...`` line on stderr.
"""

import argparse
import csv
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .boxes import RoI
from .checkpoint import config_from_dict, config_to_dict, load_checkpoint, save_checkpoint
from .postprocess import detections_to_csv
from .scenes import export_dataset, generate_scene
from .train import (TrainConfig, build_net, eval_scenes, evaluate, evaluate_oracle,
                    train)
from .visualize import visualize_scene

CHECKPOINT_EVERY = 500


def _load_config(args) -> TrainConfig:
    data = {}
    if getattr(args, "config", None):
        with open(args.config) as fh:
            data = json.load(fh)
    cfg = config_from_dict(data)
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "k", None) is not None:
        overrides["k"] = args.k
    if getattr(args, "classes", None) is not None:
        overrides["num_classes"] = args.classes
    if getattr(args, "ohem", False):
        overrides["ohem"] = True
    if getattr(args, "n_proposals", None) is not None:
        sampler = dataclasses.replace(cfg.sampler, n_proposals=args.n_proposals)
        overrides["sampler"] = sampler
    return dataclasses.replace(cfg, **overrides) if overrides else cfg


def _prepare_out(path_str: str) -> Path:
    out = Path(path_str)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.touch()
        probe.unlink()
    except OSError as exc:
        raise RuntimeError(f"output directory {out} is not writable: {exc}") from exc
    return out


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _prepare_out(args.out)
    ckpt = out / "checkpoint.bin"
    log_path = out / "train_log.csv"
    steps = args.steps

    with open(log_path, "w", newline="") as log_fh:
        writer = csv.writer(log_fh)
        writer.writerow(["step", "loss", "lr"])

        def on_step(step, loss, lr, net, state):
            writer.writerow([step, f"{loss:.6f}", f"{lr:.6g}"])
            log_fh.flush()
            if (step + 1) % CHECKPOINT_EVERY == 0:
                save_checkpoint(out / f"checkpoint_{step + 1:06d}.bin", net, cfg)

        if steps == 0:
            net = build_net(cfg)
        else:
            net, _ = train(cfg, steps=steps, on_step=on_step)
    save_checkpoint(ckpt, net, cfg)
    print(f"wrote {ckpt}")
    return 0


def cmd_eval(args) -> int:
    out = _prepare_out(args.out)
    if args.oracle:
        cfg = _load_config(args)
        scenes = eval_scenes(cfg, args.n_scenes, seed=args.seed)
        per_class, mean_ap, dets = evaluate_oracle(scenes)
    else:
        if not args.checkpoint:
            raise RuntimeError("--checkpoint is required unless --oracle is set")
        net, cfg = load_checkpoint(args.checkpoint)
        if args.seed is not None:
            cfg = dataclasses.replace(cfg, seed=args.seed)
        scenes = eval_scenes(cfg, args.n_scenes, seed=args.seed)
        per_class, mean_ap, dets = evaluate(net, scenes, cfg,
                                            seed=cfg.seed if args.seed is None else args.seed)
    metrics = {"map": mean_ap,
               "per_class_ap": {str(c): ap for c, ap in sorted(per_class.items())},
               "n_scenes": args.n_scenes,
               "n_detections": len(dets)}
    with open(out / "metrics.json", "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
        fh.write("\n")
    detections_to_csv(dets, out / "detections.csv")
    print(f"mAP@0.5 = {mean_ap:.4f} over {args.n_scenes} scenes")
    return 0


def cmd_bench(args) -> int:
    out = _prepare_out(args.out)
    variants = args.variant or list(bench_mod.VARIANTS[:2])
    for v in variants:
        if v not in bench_mod.VARIANTS:
            raise RuntimeError(f"unknown variant {v!r}; choose from {bench_mod.VARIANTS}")
    n_values = [int(s) for s in args.n_values.split(",")] if args.n_values else None
    report = bench_mod.run_bench(variants=variants,
                                 n_values=n_values or bench_mod.DEFAULT_N_VALUES,
                                 reps=args.reps, seed=args.seed or 0,
                                 parallel=args.parallel)
    bench_mod.report_to_csv(report, out / "bench.csv")
    md = bench_mod.report_to_markdown(report)
    (out / "bench.md").write_text(md)
    print(md)
    return 0


def cmd_visualize(args) -> int:
    out = _prepare_out(args.out)
    net, cfg = load_checkpoint(args.checkpoint)
    scene = generate_scene(np.random.default_rng((args.scene_seed, 2, 0)),
                           cfg.num_classes, image_size=cfg.image_size)
    roi = None
    if args.roi:
        x0, y0, w, h = (float(t) for t in args.roi.split(","))
        roi = RoI(batch_index=0, x0=x0, y0=y0, w=w, h=h)
    paths = visualize_scene(net, scene, out, roi=roi, class_id=args.class_id)
    print(f"wrote {len(paths)} files under {out}")
    return 0


def cmd_export_dataset(args) -> int:
    out = _prepare_out(args.out)
    cfg = _load_config(args)
    written = export_dataset(out, args.n_scenes, cfg.seed, cfg.num_classes,
                             image_size=cfg.image_size)
    print(f"wrote {len(written)} files under {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="psdet",
        description="Position-sensitive detection: train, evaluate, benchmark, visualize.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None, help="master RNG seed")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--config", default=None, help="JSON config overrides (strict keys)")

    p = sub.add_parser("train", help="train a detector on synthetic scenes")
    common(p)
    p.add_argument("--steps", type=int, default=None,
                   help="number of SGD steps (default: full schedule)")
    p.add_argument("--k", type=int, default=None, help="pooling grid side")
    p.add_argument("--classes", type=int, default=None, help="foreground class count")
    p.add_argument("--ohem", action="store_true", help="enable hard example mining")
    p.add_argument("--n-proposals", type=int, default=None, help="proposals per image")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint (mAP@0.5)")
    common(p)
    p.add_argument("--checkpoint", default=None, help="checkpoint file from train")
    p.add_argument("--n-scenes", type=int, default=20)
    p.add_argument("--oracle", action="store_true",
                   help="score ground truths as detections (harness upper bound)")
    p.add_argument("--classes", type=int, default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="head-variant timing harness")
    common(p)
    p.add_argument("--variant", action="append", default=None,
                   help=f"repeatable; any of {', '.join(bench_mod.VARIANTS)}")
    p.add_argument("--n-values", default=None, help="comma-separated RoI counts")
    p.add_argument("--reps", type=int, default=10)
    p.add_argument("--parallel", action="store_true",
                   help="also time threaded per-RoI pooling")
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("visualize", help="render score maps and pooled-bin overlay")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--scene-seed", type=int, default=0)
    p.add_argument("--roi", default=None, help="x0,y0,w,h in image coordinates")
    p.add_argument("--class-id", type=int, default=None)
    p.set_defaults(func=cmd_visualize)

    p = sub.add_parser("export-dataset", help="write scenes as PPM + ground-truth CSV")
    common(p)
    p.add_argument("--n-scenes", type=int, default=20)
    p.add_argument("--classes", type=int, default=None)
    p.set_defaults(func=cmd_export_dataset)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # single-line machine-parsable failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
