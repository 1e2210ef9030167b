"""Command-line entry point: gen-data, train, eval, gradcheck, inspect-haog.

All randomness funnels through --seed. SVIT_THREADS caps BLAS worker threads
(default 1 for bit determinism), so heavy imports happen after the cap is set.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path


def _cap_threads() -> None:
    n = os.environ.get("SVIT_THREADS", "1")
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ.setdefault(var, n)


def _parse_views(text: str):
    try:
        t, s = text.lower().split("x")
        return int(t), int(s)
    except ValueError as e:
        raise argparse.ArgumentTypeError("expected <n_temporal>x<n_spatial>, e.g. 8x3") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="svit", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, out_required):
        p.add_argument("--config", required=True, help="key = value config file")
        p.add_argument("--seed", type=int, default=0, help="master seed (u64)")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--checkpoint", default=None, help="checkpoint file")
        p.add_argument("--views", type=_parse_views, default=None, metavar="TxS")

    add_common(sub.add_parser("gen-data", help="write a synthetic dataset"), True)
    add_common(sub.add_parser("train", help="train on a generated dataset"), True)
    add_common(sub.add_parser("eval", help="evaluate a checkpoint"), True)
    add_common(sub.add_parser("gradcheck", help="verify gradients against finite differences"), False)
    add_common(sub.add_parser("inspect-haog", help="validate annotations and print statistics"), False)
    return parser


def _load_config(args):
    from .config import parse_config

    path = Path(args.config)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config(path, seed_override=args.seed)


def cmd_gen_data(args) -> int:
    from .data import write_dataset

    run = _load_config(args)
    write_dataset(args.out, run.gen, run.num_images, run.num_clips)
    print(f"wrote {run.num_images} images and {run.num_clips} clips to {args.out}")
    return 0


def cmd_train(args) -> int:
    from .config import ConfigError
    from .data import load_dataset
    from .model import init_params, load_checkpoint
    from .train import run_training

    run = _load_config(args)
    if not run.data_dir:
        raise ConfigError("config must set data_dir for training")
    images, clips = load_dataset(run.data_dir)
    if args.checkpoint:
        ckpt_cfg, params = load_checkpoint(args.checkpoint)
        if ckpt_cfg != run.model:
            raise ValueError("checkpoint model config does not match the run config")
    else:
        params = init_params(run.model, run.seed)
    state, history = run_training(
        params,
        run.model,
        images,
        clips,
        run.weights,
        run.opt,
        seed=run.seed,
        scale_range=run.scale_range(),
        out_dir=args.out,
    )
    print(
        f"trained {run.opt.total_steps} steps: "
        f"l_total {history[0].l_total:.4f} -> {history[-1].l_total:.4f}"
    )
    return 0


def cmd_eval(args, parser) -> int:
    from .evaluate import evaluate, write_report
    from .model import load_checkpoint
    from .config import ConfigError

    if not args.checkpoint:
        parser.error("eval requires --checkpoint")
    run = _load_config(args)
    if not run.data_dir:
        raise ConfigError("config must set data_dir for evaluation")
    cfg, params = load_checkpoint(args.checkpoint)
    views = args.views if args.views is not None else (run.views_temporal, run.views_spatial)
    report = evaluate(params, run.data_dir, views, cfg, scale_range=run.scale_range())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_report(out / "report.json", report)
    print(
        f"evaluated {report.sample_count} clips: "
        f"mean_abs_error_seconds {report.mean_abs_error_seconds:.4f}, "
        f"exact_frame_accuracy {report.exact_frame_accuracy:.3f}, "
        f"osc_accuracy {report.osc_accuracy:.3f}"
    )
    return 0


def cmd_gradcheck(args) -> int:
    from .data import gen_clip, gen_scene
    from .model import init_params
    from .train import compute_losses, gradcheck, prepare_clip

    run = _load_config(args)
    params = init_params(run.model, run.seed)
    images = []
    for i in range(3):
        scene = gen_scene(run.gen, i)
        images.append((scene.pixels, scene.haog))
    video_batch = [
        prepare_clip(gen_clip(run.gen, j), run.model, run.scale_range(), None, train_mode=False)
        for j in range(2)
    ]

    def loss_fn():
        total, _ = compute_losses(params, run.model, images, video_batch, run.weights)
        return total

    err = gradcheck(params, loss_fn, epsilon=1e-5, sample_count=200, seed=run.seed)
    print(f"max relative gradient error: {err:.3e}")
    return 0 if err < 1e-4 else 1


def cmd_inspect_haog(args) -> int:
    from .config import ConfigError
    from .data import load_annotations
    from .haog import N_SLOTS, SLOT_NAMES

    run = _load_config(args)
    if not run.data_dir:
        raise ConfigError("config must set data_dir for inspect-haog")
    path = Path(run.data_dir) / "images" / "annotations.jsonl"
    records = load_annotations(path)
    if not records:
        raise ValueError(f"no records in {path}")
    n = len(records)
    exists_rate = [0.0] * N_SLOTS
    areas = [[] for _ in range(N_SLOTS)]
    contact_rate = [0.0, 0.0]
    for _, h in records:
        for j in range(N_SLOTS):
            exists_rate[j] += h.exists[j]
            if h.boxes[j] is not None:
                areas[j].append(h.boxes[j].area())
        for k in range(2):
            contact_rate[k] += h.contact[k]
    print(f"{n} valid records in {path}")
    for j in range(N_SLOTS):
        mean_area = sum(areas[j]) / len(areas[j]) if areas[j] else 0.0
        print(
            f"  {SLOT_NAMES[j]}: exists {exists_rate[j] / n:.3f}, mean area {mean_area:.4f}"
        )
    print(f"  contact rates: left {contact_rate[0] / n:.3f}, right {contact_rate[1] / n:.3f}")
    return 0


def main(argv=None) -> int:
    _cap_threads()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "gen-data":
            return cmd_gen_data(args)
        if args.command == "train":
            return cmd_train(args)
        if args.command == "eval":
            return cmd_eval(args, parser)
        if args.command == "gradcheck":
            return cmd_gradcheck(args)
        if args.command == "inspect-haog":
            return cmd_inspect_haog(args)
        parser.error(f"unknown command {args.command!r}")
    except SystemExit:
        raise
    except Exception as e:  # single-line cause, nonzero status
        print(f"error: {e}", file=sys.stderr)
        return 1
    return 2


if __name__ == "__main__":
    sys.exit(main())
