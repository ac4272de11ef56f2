"""``uwsplat`` command-line entry point.

Every subcommand writes its effective configuration to ``config.json`` in
its output directory before doing any work. Errors end the process with a
one-line diagnostic on stderr and a nonzero exit code.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import torch

from . import io
from .config import ConfigError, RunConfig, dump_config, load_config

log = logging.getLogger("uwsplat")

CHECKPOINT_NAME = "checkpoint.uwgs"
EVAL_FILE = "eval.txt"


def _triple(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"expected three comma-separated numbers, got {text!r}")
    try:
        return tuple(float(p) for p in parts)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number in {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="uwsplat", description=__doc__.splitlines()[0])
    p.add_argument("--config", type=Path, help="JSON config file layered over the defaults")
    p.add_argument("--seed", type=int, help="global seed")
    p.add_argument("--threads", type=int, help="torch intra-op threads")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a sphere-room dataset")
    s.add_argument("out_dir", type=Path)
    s.add_argument("--width", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--cameras", type=int)
    s.add_argument("--beta-d", type=_triple)
    s.add_argument("--beta-b", type=_triple)
    s.add_argument("--b-inf", type=_triple)

    t = sub.add_parser("train", help="optimise a scene against a dataset")
    t.add_argument("dataset", type=Path)
    t.add_argument("out_dir", type=Path)
    t.add_argument("--iterations", type=int)
    t.add_argument("--eval-interval", type=int)
    t.add_argument("--no-medium", action="store_true", help="fix A = 1, B = 0")
    t.add_argument("--no-densify", action="store_true")
    t.add_argument("--resume", type=Path, help="checkpoint to continue from")

    for name, helptext in (("render", "render composed observations"),
                           ("decompose", "dump J, A, B and D per view")):
        r = sub.add_parser(name, help=helptext)
        r.add_argument("checkpoint", type=Path)
        r.add_argument("poses", type=Path, help="directory with a transforms.json manifest")
        r.add_argument("out_dir", type=Path)

    e = sub.add_parser("eval", help="PSNR/SSIM on held-out views")
    e.add_argument("checkpoint", type=Path)
    e.add_argument("dataset", type=Path)
    e.add_argument("--which", choices=("raw-render", "restored-J"), default="raw-render")
    e.add_argument("--split", choices=("test", "train", "all"), default="test")
    e.add_argument("--out", type=Path, default=Path(EVAL_FILE), help="summary file")

    g = sub.add_parser("gradcheck", help="finite-difference check of the full pipeline")
    g.add_argument("--out-dir", type=Path)
    g.add_argument("--all", action="store_true", help="check every scalar of every group")
    return p


def effective_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    cmd = args.command
    if cmd == "synth":
        s = cfg.synth
        for flag, attr in (("width", "width"), ("height", "height"), ("cameras", "n_cameras"),
                           ("beta_d", "beta_d"), ("beta_b", "beta_b"), ("b_inf", "b_inf")):
            val = getattr(args, flag)
            if val is not None:
                setattr(s, attr, val)
    elif cmd == "train":
        t = cfg.train
        if args.iterations is not None:
            t.iterations = args.iterations
        if args.eval_interval is not None:
            t.eval_interval = args.eval_interval
        if args.no_medium:
            t.use_medium = False
        if args.no_densify:
            t.densify_enabled = False
    elif cmd == "gradcheck" and args.all:
        cfg.gradcheck.max_per_group = 0
    if cfg.threads < 1:
        raise ConfigError("threads must be at least 1")
    return cfg.resolved()


# ---------------------------------------------------------------------------
# commands


def cmd_synth(args, cfg: RunConfig) -> int:
    from .synthbench import default_room, generate_dataset

    s = cfg.synth
    room = default_room(n_cameras=s.n_cameras, seed=cfg.seed, radius=s.radius,
                        beta_d=s.beta_d, beta_b=s.beta_b, b_inf=s.b_inf)
    out = generate_dataset(args.out_dir, room, s.width, s.height, seed=cfg.seed,
                           points_per_view=s.points_per_view)
    print(f"wrote {s.n_cameras} views to {out}")
    return 0


def cmd_train(args, cfg: RunConfig) -> int:
    from .optim.train import train

    dataset = io.load_dataset(args.dataset)
    state = io.load_checkpoint(args.resume) if args.resume else None
    handler = logging.FileHandler(args.out_dir / "train.log", mode="a")
    handler.setFormatter(logging.Formatter("%(asctime)s %(levelname)s %(name)s: %(message)s"))
    logging.getLogger().addHandler(handler)
    try:
        result = train(dataset, cfg.train, state=state, out_dir=args.out_dir)
    finally:
        logging.getLogger().removeHandler(handler)
        handler.close()
    ckpt = args.out_dir / CHECKPOINT_NAME
    io.save_checkpoint(result.state, ckpt)
    last = result.metrics[-1] if result.metrics else None
    if last is not None:
        print(f"iter={last.iter} PSNR_test={last.psnr_test:.4f} SSIM_test={last.ssim_test:.6f} "
              f"n_gaussians={last.n_gaussians}")
    print(f"checkpoint {ckpt}")
    return 0


def _render_views(args, cfg: RunConfig, decompose: bool) -> int:
    from .diff import forward_view
    from .synthbench import dump_decomposition

    state = io.load_checkpoint(args.checkpoint)
    poses = io.load_poses(args.poses)
    with torch.no_grad():
        for pose in poses:
            res = forward_view(state, pose, cfg.train.render)
            if decompose:
                dump_decomposition(res, args.out_dir, pose.image_id)
            else:
                io.write_image(args.out_dir / f"{pose.image_id}.png", res.image.numpy())
    print(f"wrote {len(poses)} views to {args.out_dir}")
    return 0


def cmd_render(args, cfg: RunConfig) -> int:
    return _render_views(args, cfg, decompose=False)


def cmd_decompose(args, cfg: RunConfig) -> int:
    return _render_views(args, cfg, decompose=True)


def cmd_eval(args, cfg: RunConfig) -> int:
    from .synthbench import evaluate

    state = io.load_checkpoint(args.checkpoint)
    dataset = io.load_dataset(args.dataset)
    views = {"test": dataset.test, "train": dataset.train, "all": dataset.views}[args.split]
    metrics = evaluate(state, dataset, args.which, views=views, render_cfg=cfg.train.render)
    line = metrics.summary()
    print(line)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    args.out.write_text(line + "\n")
    return 0


def cmd_gradcheck(args, cfg: RunConfig) -> int:
    from .diff import PipelineConfig, grad_check, gradcheck_fixture

    g = cfg.gradcheck
    state, views = gradcheck_fixture(g.n_gaussians, g.width, g.height, g.n_views, seed=cfg.seed)
    pipe = PipelineConfig(render=cfg.train.render, loss=cfg.train.loss)
    report = grad_check(state, views, pipe, eps=g.eps, rel_tol=g.rel_tol, abs_tol=g.abs_tol,
                        max_per_group=g.max_per_group or None, seed=cfg.seed)
    lines = report.lines() + [f"GRADCHECK={'PASS' if report.passed else 'FAIL'}"]
    print("\n".join(lines))
    if args.out_dir is not None:
        (args.out_dir / "gradcheck.txt").write_text("\n".join(lines) + "\n")
    return 0 if report.passed else 1


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "render": cmd_render,
    "decompose": cmd_decompose,
    "eval": cmd_eval,
    "gradcheck": cmd_gradcheck,
}


def _out_dir(args) -> Path | None:
    return getattr(args, "out_dir", None)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    console = logging.StreamHandler()
    console.setLevel(logging.INFO if args.verbose else logging.WARNING)
    console.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(console)
    root.setLevel(logging.INFO)
    try:
        cfg = effective_config(args)
        torch.set_num_threads(cfg.threads)
        out = _out_dir(args)
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)
            dump_config(cfg, out)
        return COMMANDS[args.command](args, cfg)
    except KeyboardInterrupt:
        print(f"uwsplat {args.command}: interrupted", file=sys.stderr)
        return 130
    except (ConfigError, io.DatasetError, io.CheckpointError, OSError, ValueError, FloatingPointError) as exc:
        print(f"uwsplat {args.command}: error: {exc}", file=sys.stderr)
        return 1
    finally:
        root.removeHandler(console)


if __name__ == "__main__":
    sys.exit(main())
