"""Command-line entry point wiring the full pipeline.

Subcommands: scene gen | scene perturb | scaffold bake | train | render |
eval [ablate] | pipeline. Exit codes: 0 success, 2 usage error, 3 data
error, 4 numerical divergence.
"""

import argparse
import json
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from . import io as nio
from .bvh import build_bvh
from .errors import DataError, DivergenceError, UsageError
from .field import load_checkpoint, save_checkpoint
from .geometry import TriangleMesh
from .renderer import render_image
from .trainer import RayDataset, TrainConfig, config_to_dict, load_config, train

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_DIVERGED = 4


def _default_threads():
    env = os.environ.get("NERFVS_THREADS")
    if env:
        return int(env)
    return os.cpu_count() or 1


def write_manifest(out_dir, command, config_snapshot, inputs, outputs, timings):
    manifest = {
        "tool_version": __version__,
        "command": command,
        "config": config_snapshot,
        "input_digests": {str(p): nio.sha256_of(p) for p in inputs if Path(p).is_file()},
        "outputs": [str(p) for p in outputs],
        "timings_sec": timings,
    }
    with open(Path(out_dir) / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=1, sort_keys=True)
        f.write("\n")


def _load_mesh(path):
    v, t = nio.read_obj(path)
    return TriangleMesh(vertices=v, triangles=t)


# ---------------------------------------------------------------------------
# Subcommand implementations

def cmd_scene_gen(args):
    from .scene import generate_dataset, load_spec

    spec = load_spec(args.spec)
    t0 = time.monotonic()
    out = generate_dataset(spec, args.out, threads=args.threads, shadow_eps=args.eps)
    write_manifest(out, "scene gen", spec.to_dict(), [args.spec],
                   sorted(str(p) for p in Path(out).rglob("*") if p.is_file()),
                   {"gen": time.monotonic() - t0})
    print(f"dataset written to {out}")
    return EXIT_OK


def cmd_scene_perturb(args):
    from .scene import perturb_scaffold

    mesh = _load_mesh(args.mesh)
    out_mesh = perturb_scaffold(mesh, args.mode, args.mag, seed=args.seed)
    nio.write_obj(args.out, out_mesh.vertices, out_mesh.triangles)
    print(f"perturbed scaffold ({args.mode}, mag={args.mag}) -> {args.out}")
    return EXIT_OK


def cmd_scaffold_bake(args):
    from .scene import bake_priors

    mesh = _load_mesh(args.mesh)
    cameras = nio.read_cameras(args.cameras)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    bake_priors(mesh, cameras, out, eps=args.eps, threads=args.threads)
    write_manifest(out, "scaffold bake", {"eps": args.eps},
                   [args.mesh, args.cameras],
                   sorted(str(p) for p in (out / "priors").glob("*.pfm")),
                   {"bake": time.monotonic() - t0})
    print(f"priors baked into {out / 'priors'}")
    return EXIT_OK


def _train_config(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    overrides = {}
    loss_overrides = {}
    for kv in args.set or []:
        if "=" not in kv:
            raise UsageError(f"--set expects key=value, got {kv!r}")
        key, value = kv.split("=", 1)
        from .trainer import _LOSS_KEYS, parse_config

        merged = parse_config(f"{key} = {value}")  # reuse the key/type table
        if key in _LOSS_KEYS:
            loss_overrides[key] = getattr(merged.loss_weights, key)
        else:
            overrides[key] = getattr(merged, key)
    if args.seed is not None:
        overrides["seed"] = args.seed
    if loss_overrides:
        overrides["loss_weights"] = replace(cfg.loss_weights, **loss_overrides)
    return replace(cfg, **overrides) if overrides else cfg


def cmd_train(args):
    cfg = _train_config(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dataset = RayDataset.load(args.data)
    t0 = time.monotonic()
    grid, _ = train(dataset, cfg, log_path=out / "train_log.csv",
                    progress=lambda row: print(
                        f"iter {row['iter']:6d}  total {row['L_total']:.5f}  "
                        f"color {row['L_color']:.5f}", flush=True))
    ckpt = out / "checkpoint.nfvs"
    save_checkpoint(ckpt, grid, metadata=config_to_dict(cfg))
    inputs = [args.config] if args.config else []
    write_manifest(out, "train", config_to_dict(cfg), inputs,
                   [str(ckpt), str(out / "train_log.csv")],
                   {"train": time.monotonic() - t0})
    print(f"checkpoint written to {ckpt}")
    return EXIT_OK


def cmd_render(args):
    grid = load_checkpoint(args.ckpt)
    cameras = nio.read_cameras(args.cameras)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.monotonic()
    outputs = []
    for i, cam in enumerate(cameras):
        image, depth = render_image(grid, cam, args.t_near, args.t_far,
                                    args.n_samples)
        nio.write_ppm(out / f"{i}.ppm", image)
        nio.write_pfm(out / f"depth_{i}.pfm", depth)
        outputs += [str(out / f"{i}.ppm"), str(out / f"depth_{i}.pfm")]
    write_manifest(out, "render", {"n_samples": args.n_samples},
                   [args.ckpt, args.cameras], outputs,
                   {"render": time.monotonic() - t0})
    print(f"rendered {len(cameras)} views into {out}")
    return EXIT_OK


def cmd_eval(args):
    if args.mode == "ablate":
        from .evaluation import run_ablation

        cfg = _train_config(args)
        out = Path(args.out or "ablation")
        rows = run_ablation(args.data, cfg, out, threads=args.threads)
        for row in rows:
            print(row)
        write_manifest(out, "eval ablate", config_to_dict(cfg), [],
                       [str(out / "ablation.csv"), str(out / "ablation.json")], {})
        return EXIT_OK

    from .evaluation import evaluate_split

    if not args.ckpt:
        raise UsageError("eval requires --ckpt (or the 'ablate' mode)")
    grid = load_checkpoint(args.ckpt)
    with open(str(args.ckpt) + ".json") as f:
        meta = json.load(f)
    n_samples = int(meta.get("n_samples_per_ray", 128))
    t_near = float(meta.get("t_near", 0.05))
    t_far = float(meta.get("t_far", 3.5))
    report, _ = evaluate_split(grid, args.data, args.split, n_samples, t_near,
                               t_far, threads=args.threads)
    if args.report:
        report.save(args.report)
    print(json.dumps({k: v for k, v in report.to_dict().items()
                      if not k.startswith("per_view")}, indent=1, sort_keys=True))
    return EXIT_OK


PIPELINE_STAGES = ("gen", "bake", "train", "render", "eval")


def cmd_pipeline(args):
    from .scene import bake_priors, generate_dataset, load_spec

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_dir = out / "data"
    train_dir = out / "train"
    render_dir = out / "render"
    eval_dir = out / "eval"
    cfg = _train_config(args)
    spec = load_spec(args.spec)
    timings = {}

    def done(stage_dir):
        return (Path(stage_dir) / "manifest.json").is_file()

    def run_stage(name, stage_dir, fn):
        if done(stage_dir):
            print(f"[{name}] already complete, skipping")
            return
        print(f"[{name}] running...", flush=True)
        t0 = time.monotonic()
        try:
            outputs = fn()
        except Exception as exc:
            print(f"pipeline failed in stage '{name}': {exc}", file=sys.stderr)
            raise
        timings[name] = time.monotonic() - t0
        write_manifest(stage_dir, f"pipeline:{name}", config_to_dict(cfg),
                       [args.spec] + ([args.config] if args.config else []),
                       [str(o) for o in outputs], {name: timings[name]})

    def stage_gen():
        generate_dataset(spec, data_dir, threads=args.threads)
        return [data_dir]

    run_stage("gen", data_dir, stage_gen)

    bake_dir = out / "bake"
    bake_dir.mkdir(exist_ok=True)

    def stage_bake():
        mesh = _load_mesh(data_dir / "scaffold.obj")
        cameras = nio.read_cameras(data_dir / "cameras_train.json")
        bake_priors(mesh, cameras, data_dir, threads=args.threads)
        return [data_dir / "priors"]

    run_stage("bake", bake_dir, stage_bake)

    train_dir.mkdir(exist_ok=True)

    def stage_train():
        dataset = RayDataset.load(data_dir)
        grid, _ = train(dataset, cfg, log_path=train_dir / "train_log.csv")
        save_checkpoint(train_dir / "checkpoint.nfvs", grid,
                        metadata=config_to_dict(cfg))
        return [train_dir / "checkpoint.nfvs"]

    run_stage("train", train_dir, stage_train)

    render_dir.mkdir(exist_ok=True)

    def stage_render():
        grid = load_checkpoint(train_dir / "checkpoint.nfvs")
        outputs = []
        for split in ("interp", "extrap"):
            cams = nio.read_cameras(data_dir / f"cameras_{split}.json")
            split_dir = render_dir / split
            split_dir.mkdir(exist_ok=True)
            for i, cam in enumerate(cams):
                image, depth = render_image(grid, cam, cfg.t_near, cfg.t_far,
                                            cfg.n_samples_per_ray)
                nio.write_ppm(split_dir / f"{i}.ppm", image)
                nio.write_pfm(split_dir / f"depth_{i}.pfm", depth)
                outputs.append(split_dir / f"{i}.ppm")
        return outputs

    run_stage("render", render_dir, stage_render)

    eval_dir.mkdir(exist_ok=True)

    def stage_eval():
        from .evaluation import evaluate_split

        grid = load_checkpoint(train_dir / "checkpoint.nfvs")
        outputs = []
        for split in ("interp", "extrap"):
            report, _ = evaluate_split(grid, data_dir, split,
                                       cfg.n_samples_per_ray, cfg.t_near,
                                       cfg.t_far, threads=args.threads)
            path = eval_dir / f"report_{split}.json"
            report.save(path)
            outputs.append(path)
            print(f"[eval] {split}: psnr={report.mean_psnr:.2f} "
                  f"ssim={report.mean_ssim:.4f} "
                  f"depth_rmse={report.mean_depth_rmse:.4f}")
        return outputs

    run_stage("eval", eval_dir, stage_eval)

    write_manifest(out, "pipeline", config_to_dict(cfg),
                   [args.spec] + ([args.config] if args.config else []),
                   [str(d) for d in (data_dir, train_dir, render_dir, eval_dir)],
                   timings)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser

def build_parser():
    parser = argparse.ArgumentParser(
        prog="nerfvs",
        description="Voxel radiance-field free view synthesis with mesh-scaffold priors",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_threads(p):
        p.add_argument("--threads", type=int, default=_default_threads(),
                       help="worker count for per-view parallel stages "
                            "(NERFVS_THREADS; 1 = canonical reference output)")

    scene = sub.add_parser("scene", help="synthetic scene dataset tools")
    scene_sub = scene.add_subparsers(dest="scene_command", required=True)
    gen = scene_sub.add_parser("gen", help="generate a dataset from a scene spec")
    gen.add_argument("--spec", required=True)
    gen.add_argument("--out", required=True)
    gen.add_argument("--eps", type=float, default=0.01)
    add_threads(gen)
    gen.set_defaults(func=cmd_scene_gen)
    pert = scene_sub.add_parser("perturb", help="corrupt a scaffold mesh")
    pert.add_argument("--mesh", required=True)
    pert.add_argument("--out", required=True)
    pert.add_argument("--mode", required=True,
                      choices=("vertex-noise", "delete-random-faces", "offset-object"))
    pert.add_argument("--mag", type=float, required=True)
    pert.add_argument("--seed", type=int, default=0)
    pert.set_defaults(func=cmd_scene_perturb)

    scaf = sub.add_parser("scaffold", help="prior baking from a scaffold mesh")
    scaf_sub = scaf.add_subparsers(dest="scaffold_command", required=True)
    bake = scaf_sub.add_parser("bake", help="bake distance and coverage maps")
    bake.add_argument("--mesh", required=True)
    bake.add_argument("--cameras", required=True)
    bake.add_argument("--out", required=True)
    bake.add_argument("--eps", type=float, default=0.01)
    add_threads(bake)
    bake.set_defaults(func=cmd_scaffold_bake)

    tr = sub.add_parser("train", help="train a voxel grid on a baked dataset")
    tr.add_argument("--config", help="key = value config file")
    tr.add_argument("--data", required=True)
    tr.add_argument("--out", required=True)
    tr.add_argument("--seed", type=int)
    tr.add_argument("--set", action="append", metavar="KEY=VALUE",
                    help="override a config key (repeatable)")
    add_threads(tr)
    tr.set_defaults(func=cmd_train)

    rn = sub.add_parser("render", help="render views from a checkpoint")
    rn.add_argument("--ckpt", required=True)
    rn.add_argument("--cameras", required=True)
    rn.add_argument("--out", required=True)
    rn.add_argument("--n-samples", type=int, default=128)
    rn.add_argument("--t-near", type=float, default=0.05)
    rn.add_argument("--t-far", type=float, default=3.5)
    rn.set_defaults(func=cmd_render)

    ev = sub.add_parser("eval", help="score a checkpoint, or run the ablations")
    ev.add_argument("mode", nargs="?", choices=("ablate",),
                    help="'ablate' trains and compares the four loss variants")
    ev.add_argument("--ckpt")
    ev.add_argument("--data", required=True)
    ev.add_argument("--split", default="extrap",
                    choices=("train", "interp", "extrap"))
    ev.add_argument("--report", help="write the EvalReport JSON here")
    ev.add_argument("--config")
    ev.add_argument("--out", help="ablation output directory")
    ev.add_argument("--seed", type=int)
    ev.add_argument("--set", action="append", metavar="KEY=VALUE")
    add_threads(ev)
    ev.set_defaults(func=cmd_eval)

    pl = sub.add_parser("pipeline", help="scene gen -> bake -> train -> render -> eval")
    pl.add_argument("--spec", required=True)
    pl.add_argument("--config")
    pl.add_argument("--out", required=True)
    pl.add_argument("--seed", type=int)
    pl.add_argument("--set", action="append", metavar="KEY=VALUE")
    add_threads(pl)
    pl.set_defaults(func=cmd_pipeline)

    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
