"""Batch command line: synth, train, predict, eval, ablate.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical failure.
Every command is deterministic given its resolved configuration, which is
echoed beside the outputs.
"""

from __future__ import annotations

import argparse
import copy
import os
import sys
from pathlib import Path

import numpy as np

from .config import parse_config_file, resolve_config, write_resolved
from .dataset import SynthConfig, load_pairs, synthesize_dataset
from .errors import DataError, NumericalError, UsageError
from .evaluation import (
    distance_field_comments, evaluate_pairs, extract_surface,
    per_point_distance_field, write_report,
)
from .formats import read_depth, read_grid, write_grid, write_mesh, GRID_KIND_FLOAT
from .geometry import VoxelGrid
from .model import generator_forward
from .objectives import LossWeights
from .training import AdamConfig, Trainer, TrainSchedule, run_training

__all__ = ["main"]


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_shared(sub):
    sub.add_argument("--config", metavar="PATH", help="key = value config file")
    sub.add_argument("--seed", type=int, metavar="N")
    sub.add_argument("--out", metavar="DIR")
    sub.add_argument("--preset", choices=("paper", "desk"))


def build_parser():
    parser = _Parser(prog="facevox",
                     description="single-depth-view 3D face reconstruction toolkit")
    cmds = parser.add_subparsers(dest="command", required=True)

    p = cmds.add_parser("synth", help="synthesize a depth/grid training dataset")
    _add_shared(p)
    p.add_argument("--count", type=int)
    p.add_argument("--force", action="store_true",
                   help="overwrite a partial previous run")

    p = cmds.add_parser("train", help="train generator and critic on a dataset")
    _add_shared(p)
    p.add_argument("dataset", nargs="?", help="dataset directory or manifest path")
    p.add_argument("--resume", metavar="CKPT", help="checkpoint to continue from")
    p.add_argument("--iterations", type=int)
    p.add_argument("--no-attention", action="store_true")
    p.add_argument("--no-sparsity", action="store_true")

    p = cmds.add_parser("predict", help="predict voxel grids from depth views")
    _add_shared(p)
    p.add_argument("checkpoint")
    p.add_argument("inputs", help="depth file or directory of depth files")
    p.add_argument("--mesh", action="store_true",
                   help="also export a surface mesh per prediction")

    p = cmds.add_parser("eval", help="score predictions against a manifest")
    _add_shared(p)
    p.add_argument("predictions", help="directory of predicted grids")
    p.add_argument("manifest", help="dataset manifest with ground truth")
    p.add_argument("--threshold", type=float)
    p.add_argument("--distance-meshes", action="store_true",
                   help="export per-sample error surfaces with distance comments")

    p = cmds.add_parser("ablate", help="train the 2x2 attention/sparsity grid")
    _add_shared(p)
    p.add_argument("dataset", nargs="?", help="dataset directory or manifest path")
    p.add_argument("--iterations", type=int)
    return parser


def _resolved(args, extra_flags=None):
    file_overrides = parse_config_file(args.config) if args.config else {}
    # paths inside a config file are relative to the file itself
    base = Path(args.config).parent if args.config else None
    for key in ("dataset", "out"):
        value = file_overrides.get(key)
        if base is not None and value and not os.path.isabs(value):
            file_overrides[key] = str((base / value).resolve())
    flags = {"preset": args.preset, "seed": args.seed, "out": args.out}
    flags.update(extra_flags or {})
    return resolve_config(file_overrides=file_overrides, flag_overrides=flags)


def _require_out(cfg):
    if not cfg.out:
        raise UsageError("an output directory is required (--out or `out` config key)")
    os.makedirs(cfg.out, exist_ok=True)
    return Path(cfg.out)


def _echo_resolved(out_dir, cfg):
    """Write the resolved config with paths relative to the output directory,
    which keeps reruns byte-identical and the echo round-trippable."""
    echo = copy.deepcopy(cfg)
    echo.out = "."
    if echo.dataset:
        try:
            echo.dataset = os.path.relpath(echo.dataset, out_dir)
        except ValueError:
            pass
    write_resolved(Path(out_dir) / "resolved.cfg", echo)


def _manifest_path(dataset):
    if not dataset:
        raise UsageError("a dataset is required (positional or `dataset` config key)")
    path = Path(dataset)
    if path.is_dir():
        path = path / "manifest.tsv"
    if not path.exists():
        raise DataError(f"manifest not found: {path}")
    return path


def _synth_config(cfg):
    return SynthConfig(count=cfg.count, seed=cfg.seed, view_size=cfg.view_size,
                       grid_size=cfg.grid_size, identity_dim=cfg.identity_dim,
                       identity_scale=cfg.identity_scale, yaw_range=cfg.yaw_range,
                       pitch_range=cfg.pitch_range, roll_range=cfg.roll_range,
                       sigma_noise=cfg.sigma_noise, hole_count=cfg.hole_count,
                       hole_radius=cfg.hole_radius)


def _trainer_from_config(cfg, attention=None, sparsity=None, seed=None):
    model_cfg = cfg.model_config()
    if attention is not None:
        model_cfg.attention_enabled = attention
    schedule = TrainSchedule(iterations=cfg.iterations, eval_interval=cfg.eval_interval,
                             seed=cfg.seed if seed is None else seed,
                             critic_steps=cfg.critic_steps, gen_steps=cfg.gen_steps,
                             batch_size=cfg.batch_size,
                             allow_ratio_override=cfg.allow_ratio_override)
    weights = LossWeights(alpha=cfg.alpha, beta=cfg.beta, gamma=cfg.gamma,
                          lambda_gp=cfg.lambda_gp)
    adam = AdamConfig(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps_adam)
    return Trainer(model_cfg, weights=weights, schedule=schedule, adam_gen=adam,
                   adam_critic=AdamConfig(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                                          eps=cfg.eps_adam),
                   sparsity_enabled=cfg.sparsity if sparsity is None else sparsity)


def cmd_synth(args):
    cfg = _resolved(args, {"count": args.count})
    out = _require_out(cfg)
    synthesize_dataset(out, _synth_config(cfg), force=args.force)
    cfg.dataset = str(out)
    _echo_resolved(out, cfg)
    print(f"wrote {cfg.count} samples to {out}")
    return 0


def cmd_train(args):
    cfg = _resolved(args, {"iterations": args.iterations,
                           "dataset": args.dataset,
                           "attention": False if args.no_attention else None,
                           "sparsity": False if args.no_sparsity else None})
    out = _require_out(cfg)
    manifest = _manifest_path(cfg.dataset)
    _, _, samples = load_pairs(manifest)
    if args.resume:
        trainer = Trainer.load(args.resume)
    else:
        trainer = _trainer_from_config(cfg)
    _echo_resolved(out, cfg)
    history = run_training(trainer, samples, log_path=out / "train.log",
                           checkpoint_dir=out)
    print(f"trained {len(history)} iterations; final checkpoint in {out}")
    return 0


def _depth_inputs(path):
    p = Path(path)
    if p.is_dir():
        files = sorted(p.glob("*.dpth"))
        if not files:
            raise DataError(f"{p}: no .dpth files found")
        return files
    if not p.exists():
        raise DataError(f"depth input not found: {p}")
    return [p]


def cmd_predict(args):
    out_dir = Path(args.out) if args.out else None
    trainer = Trainer.load(args.checkpoint)
    model_cfg = trainer.config
    gen = trainer.gen.constants()
    files = _depth_inputs(args.inputs)
    if out_dir is None:
        out_dir = files[0].parent if files[0].parent != Path() else Path(".")
    os.makedirs(out_dir, exist_ok=True)
    failures = []
    for f in files:
        view = read_depth(f)
        if view.values.shape != (model_cfg.view_size, model_cfg.view_size):
            failures.append(f"{f}: size {view.values.shape} does not match "
                            f"checkpoint view {model_cfg.view_size}")
            continue
        pred = generator_forward(gen, model_cfg, view).data.astype(np.float32)
        target = out_dir / (f.stem + ".voxg")
        write_grid(target, VoxelGrid(pred), kind=GRID_KIND_FLOAT)
        if args.mesh:
            mesh = extract_surface(pred, 0.5)
            write_mesh(out_dir / (f.stem + ".obj"), mesh)
    if failures:
        for line in failures:
            print(line, file=sys.stderr)
        raise DataError(f"{len(failures)} input(s) failed")
    print(f"wrote {len(files)} prediction(s) to {out_dir}")
    return 0


def cmd_eval(args):
    threshold = args.threshold if args.threshold is not None else 0.5
    if not 0.0 < threshold < 1.0:
        raise UsageError("threshold must lie in (0,1)")
    manifest = _manifest_path(args.manifest)
    records, _, _ = load_pairs(manifest)
    base = manifest.parent
    pred_dir = Path(args.predictions)
    missing = []
    pairs = []
    for r in records:
        stem = Path(r.depth_path).stem
        pred_path = pred_dir / (stem + ".voxg")
        if not pred_path.exists():
            missing.append(str(pred_path))
            continue
        pred = read_grid(pred_path)
        truth = read_grid(base / r.grid_path)
        pairs.append((stem, pred, truth))
    if missing:
        for line in missing:
            print(f"missing prediction: {line}", file=sys.stderr)
        raise DataError(f"{len(missing)} prediction(s) missing")
    report = evaluate_pairs(pairs, threshold=threshold)
    out = Path(args.out) if args.out else pred_dir / "report.tsv"
    if out.is_dir():
        out = out / "report.tsv"
    write_report(out, report)
    if args.distance_meshes:
        for (stem, pred, truth) in pairs:
            pts, dists = per_point_distance_field(pred, truth, threshold)
            mesh = extract_surface(pred, threshold)
            write_mesh(pred_dir / (stem + "_error.obj"), mesh,
                       trailing_comments=distance_field_comments(dists))
    print(f"mean IoU {report.mean_iou:.6f}  mean CE {report.mean_ce:.6f}  "
          f"({report.count} samples) -> {out}")
    return 0


def cmd_ablate(args):
    cfg = _resolved(args, {"iterations": args.iterations, "dataset": args.dataset})
    out = _require_out(cfg)
    manifest = _manifest_path(cfg.dataset)
    _, _, samples = load_pairs(manifest)
    _echo_resolved(out, cfg)

    rows = []
    for attention, sparsity in ((False, False), (True, False), (False, True), (True, True)):
        tag = f"att{int(attention)}_sp{int(sparsity)}"
        run_dir = out / tag
        os.makedirs(run_dir, exist_ok=True)
        trainer = _trainer_from_config(cfg, attention=attention, sparsity=sparsity)
        run_training(trainer, samples, log_path=run_dir / "train.log",
                     checkpoint_dir=run_dir)
        pairs = []
        gen = trainer.gen.constants()
        for i, s in enumerate(samples):
            pred = generator_forward(gen, trainer.config, s.depth).data
            pairs.append((f"sample_{i:06d}", pred, s.grid))
        report = evaluate_pairs(pairs, threshold=cfg.threshold)
        rows.append((attention, sparsity, report.mean_iou, report.mean_ce))

    table = out / "ablation.tsv"
    with open(table, "w") as fh:
        fh.write("attention\tsparsity\tiou\tce\n")
        for attention, sparsity, miou, mce in rows:
            fh.write(f"{int(attention)}\t{int(sparsity)}\t{miou:.9g}\t{mce:.9g}\n")
    print(f"wrote 4-row ablation table to {table}")
    return 0


_COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "predict": cmd_predict,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
