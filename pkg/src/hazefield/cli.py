"""Command-line front end.

Subcommands: synth, train, render, eval, gradcheck. Every run is reproducible
from its config JSON and seed; output directories receive the resolved config,
a tool identifier, machine-readable results, and report figures.

Exit codes: 0 success, 1 internal error or divergence, 2 invalid input,
3 corrupt artifact.
"""

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import parse_run_config
from .evalkit import run_eval
from .fileio import (CorruptArtifactError, config_digest, load_dataset,
                     write_pfm, write_png)
from .gradcheck import run_gradcheck
from .scenes import build_fixture_dataset, generate_cameras
from .trainer import load_checkpoint, render_novel_view, train

TOOL_ID = f"hazefield {__version__}"


def _write_run_info(out_dir, run_config):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = run_config.to_dict()
    with open(out_dir / "config.json", "w") as f:
        json.dump(doc, f, indent=2)
    with open(out_dir / "run_info.json", "w") as f:
        json.dump({"tool": TOOL_ID,
                   "config_sha256": config_digest(doc).hex()}, f, indent=2)


def _load_run_config(args):
    doc = {}
    if getattr(args, "config", None):
        with open(args.config) as f:
            doc = json.load(f)
    rc = parse_run_config(doc)
    # flags win over the config file
    if getattr(args, "dataset", None):
        rc.dataset = args.dataset
    if getattr(args, "out", None):
        rc.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        rc.seed = args.seed
        rc.train.seed = args.seed
    if getattr(args, "iters", None) is not None:
        rc.train.total_iterations = args.iters
    return rc


def cmd_synth(args) -> int:
    if args.beta_sweep:
        lo, hi, step = (float(v) for v in args.beta_sweep.split(":"))
        betas = []
        b = lo
        while b <= hi + 1e-9:
            betas.append(round(b, 6))
            b += step
    else:
        betas = [args.beta]
    for beta in betas:
        if beta <= 0:
            raise ValueError("beta must be positive")
    if not (0.0 < args.A < 1.5):
        raise ValueError("A must be in (0, 1.5)")
    if args.preset != "fixture":
        raise ValueError(f"unknown scene preset {args.preset!r}")
    for beta in betas:
        out = Path(args.out)
        if len(betas) > 1:
            out = out / f"beta_{beta:.3f}"
        build_fixture_dataset(out, beta_gt=beta, a_gt=args.A,
                              n_train=args.views, n_test=args.test_views,
                              resolution=args.res, levels=args.levels,
                              seed=args.seed, threads=args.threads)
        print(f"wrote dataset ({beta=:.3f}) to {out}")
    return 0


def cmd_train(args) -> int:
    rc = _load_run_config(args)
    if args.print_config:
        print(json.dumps(rc.to_dict(), indent=2))
        return 0
    if rc.dataset is None:
        raise ValueError("no dataset given (flag --dataset or config key)")
    if rc.out_dir is None:
        raise ValueError("no output directory given (flag --out or config key)")
    if args.ablate:
        from .evalkit import ablation_config
        rc.train = ablation_config(rc.train, f"no_{args.ablate}")
    dataset = load_dataset(rc.dataset)
    _write_run_info(rc.out_dir, rc)
    digest = config_digest(rc.to_dict())
    result = train(dataset, rc.train, out_dir=rc.out_dir,
                   resume_from=args.resume, config_digest=digest,
                   progress=lambda m: print(
                       f"iter {m['iter']:6d} total {m['total']:.5f} "
                       f"rec {m['rec']:.5f} beta {m['beta_mean']:.4f} "
                       f"A {m['a_mean']:.4f}"))
    from .figures import save_loss_curves
    save_loss_curves(result.metrics, Path(rc.out_dir) / "loss_curves.png")
    print(f"final checkpoint: {result.checkpoint_path}")
    return 0


def cmd_render(args) -> int:
    ck = load_checkpoint(args.checkpoint)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.orbit:
        cams = generate_cameras(
            args.orbit, radius=4.0,
            elevation_range=(math.radians(25), math.radians(25)),
            width=args.res, height=args.res, focal=1.25 * args.res,
            near=2.0, far=6.0)
    else:
        if args.dataset is None:
            raise ValueError("--camera-index needs --dataset for the pose")
        dataset = load_dataset(args.dataset)
        if not 0 <= args.camera_index < dataset.n_images:
            raise ValueError("camera index out of range")
        cams = [dataset.camera(args.camera_index)]
    for k, cam in enumerate(cams):
        rgb, depth = render_novel_view(ck, cam)
        write_png(out_dir / f"render_{k:03d}.png", rgb)
        if args.depth:
            write_pfm(out_dir / f"depth_{k:03d}.pfm", depth)
    print(f"wrote {len(cams)} view(s) to {out_dir}")
    return 0


def cmd_eval(args) -> int:
    rc = _load_run_config(args)
    dataset = load_dataset(args.dataset)
    checkpoint = None
    if args.checkpoint:
        checkpoint = load_checkpoint(args.checkpoint)
    elif args.baseline == "ours":
        raise ValueError("--baseline ours needs --checkpoint")
    out_dir = Path(args.out)
    _write_run_info(out_dir, rc)
    report = run_eval(dataset, checkpoint=checkpoint,
                      baseline_mode=args.baseline, config=rc.train,
                      out_dir=out_dir)
    print(json.dumps(report.to_dict(), indent=2))
    return 0


def cmd_gradcheck(args) -> int:
    rows = run_gradcheck(seed=args.seed)
    width = max(len(r.name) for r in rows)
    failed = False
    for r in rows:
        status = "PASS" if r.passed else "FAIL"
        print(f"{r.name:<{width}}  max rel err {r.max_rel_err:.3e}  "
              f"tol {r.tol:.0e}  {status}")
        failed = failed or not r.passed
    return 1 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hazefield", description=__doc__)
    p.add_argument("--version", action="version", version=TOOL_ID)
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("synth", help="generate a synthetic hazy dataset")
    ps.add_argument("--preset", default="fixture")
    ps.add_argument("--beta", type=float, default=0.162)
    ps.add_argument("--A", type=float, default=0.8)
    ps.add_argument("--views", type=int, default=20)
    ps.add_argument("--test-views", type=int, default=5)
    ps.add_argument("--res", type=int, default=64)
    ps.add_argument("--levels", type=int, default=256)
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--threads", type=int, default=1,
                    help="cap render workers for dataset generation")
    ps.add_argument("--beta-sweep", default=None, metavar="LO:HI:STEP",
                    help="emit one dataset per beta in the range")
    ps.add_argument("--out", required=True)
    ps.set_defaults(func=cmd_synth)

    pt = sub.add_parser("train", help="train on a hazy dataset")
    pt.add_argument("--config", default=None, help="run-config JSON")
    pt.add_argument("--dataset", default=None)
    pt.add_argument("--out", default=None)
    pt.add_argument("--seed", type=int, default=None)
    pt.add_argument("--iters", type=int, default=None)
    pt.add_argument("--resume", default=None, help="checkpoint to resume from")
    pt.add_argument("--ablate", choices=["smrc", "cons", "cd", "tv"],
                    default=None)
    pt.add_argument("--print-config", action="store_true")
    pt.set_defaults(func=cmd_train)

    pr = sub.add_parser("render", help="render novel views from a checkpoint")
    pr.add_argument("--checkpoint", required=True)
    pr.add_argument("--dataset", default=None)
    pr.add_argument("--camera-index", type=int, default=0)
    pr.add_argument("--orbit", type=int, default=None,
                    help="render an orbit of N poses instead")
    pr.add_argument("--res", type=int, default=64)
    pr.add_argument("--depth", action="store_true", help="also write PFM depth")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_render)

    pe = sub.add_parser("eval", help="evaluate against ground-truth clean views")
    pe.add_argument("--dataset", required=True)
    pe.add_argument("--checkpoint", default=None)
    pe.add_argument("--baseline", choices=["ours", "naive", "dcp"],
                    default="ours")
    pe.add_argument("--config", default=None)
    pe.add_argument("--seed", type=int, default=None)
    pe.add_argument("--iters", type=int, default=None)
    pe.add_argument("--out", required=True)
    pe.set_defaults(func=cmd_eval)

    pg = sub.add_parser("gradcheck", help="verify all analytic gradients")
    pg.add_argument("--seed", type=int, default=0)
    pg.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except CorruptArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
