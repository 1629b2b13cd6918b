"""Command-line entry point: ``tsagg {synth,encode,ablate,flops,visualize,probe,validate}``."""
from __future__ import annotations

import argparse
import dataclasses
import logging
import shutil
import sys
import tempfile
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from tsagg import ablation, costmodel
from tsagg.encoder import ConfigError, EncoderConfig, ModelWeights, encode, load_config
from tsagg.synthdata import generate, make_spec, write_truth
from tsagg.tokenization import FormatError, read_tensors, read_video, write_tensors, write_video
from tsagg.trajectory import (
    Trajectory,
    TrajectoryError,
    probe_csv,
    recover_groups,
    render_masks,
    similarity_probe,
    write_ppm,
)

log = logging.getLogger("tsagg")


class CLIError(Exception):
    pass


@contextmanager
def staged(out: Path):
    """Write into a scratch directory; move files into ``out`` only on success."""
    out.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".staging-", dir=out.parent))
    try:
        yield tmp
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    out.mkdir(parents=True, exist_ok=True)
    for f in sorted(tmp.iterdir()):
        f.replace(out / f.name)
    tmp.rmdir()


def validate_config(path: str | Path) -> EncoderConfig:
    """Parse and check a config file; raises ConfigError listing every problem."""
    return load_config(path)


def _overrides(cfg: EncoderConfig, args) -> EncoderConfig:
    changes = {}
    for flag, name in (("seed", "seed"), ("strategy", "strategy"), ("rt", "r_t"), ("rs", "r_s"),
                       ("frames", "frames"), ("weighting", "merge_weighting"),
                       ("reduction", "reduction")):
        v = getattr(args, flag, None)
        if v is not None:
            changes[name] = v
    if getattr(args, "spatial_plan", None):
        changes["spatial_plan"] = args.spatial_plan.replace("-", "_")
    if getattr(args, "clamp", False):
        changes["clamp"] = True
    if getattr(args, "no_agg", False):
        changes.update(r_t=0, r_s=0)
    cfg = dataclasses.replace(cfg, **changes)
    cfg.check()
    return cfg


def _summary(lines: dict) -> str:
    return "".join(f"{k} = {v}\n" for k, v in lines.items())


# --- subcommands --------------------------------------------------------------

def cmd_synth(args) -> None:
    spec = make_spec(args.frames or 16, args.height, args.width, args.patch, args.segments,
                     args.regions, args.sigma, seed=args.seed)
    video, _ = generate(spec, seed=args.seed)
    with staged(Path(args.out)) as tmp:
        write_video(tmp / "video.tstv", video)
        write_truth(tmp / "truth.txt", spec)
    print(f"wrote {args.out}/video.tstv ({video.frames}x{video.height}x{video.width}) and truth.txt")


def cmd_encode(args) -> None:
    cfg = _overrides(load_config(args.config), args)
    video = read_video(args.video)
    weights = ModelWeights.load(args.weights, cfg) if args.weights else None
    start = time.perf_counter()
    enc = encode(video, cfg, weights)
    wall = time.perf_counter() - start

    groups = recover_groups(enc.trajectory)
    if not np.array_equal(groups.sizes(), enc.grid.mass().round().astype(np.int64)):
        raise TrajectoryError("recovered group sizes disagree with token bookkeeping")

    g = enc.grid
    t_out, l_out = g.shape
    summary = {
        "frames_in": cfg.frames,
        "patches_in": cfg.num_patches,
        "tokens_in": cfg.input_tokens,
        "final_frames": t_out,
        "final_patches": l_out,
        "final_tokens": t_out * l_out,
        "token_reduction_pct": f"{100 * (1 - t_out * l_out / cfg.input_tokens):.2f}",
        "tokens_per_block": " ".join(str(b.shape_out[0] * b.shape_out[1]) for b in enc.trajectory.blocks),
        "shape_per_block": " ".join(f"{b.shape_out[0]}x{b.shape_out[1]}" for b in enc.trajectory.blocks),
        "constituent_mass": f"{g.mass().sum():.1f}",
        "wall_time_s": f"{wall:.3f}",
    }
    with staged(Path(args.out)) as tmp:
        write_tensors(tmp / "features.tstw", {
            "features": g.features, "token_size": g.token_size,
            "frame_size": g.frame_size, "cls": g.cls,
        })
        if read_tensors(tmp / "features.tstw")["features"].shape != g.features.shape:
            raise FormatError("feature file failed read-back")
        (tmp / "trajectory.json").write_text(enc.trajectory.to_json())
        (tmp / "groups.txt").write_text(groups.to_text())
        (tmp / "frames.txt").write_text(groups.frames_text())
        (tmp / "config.txt").write_text(cfg.to_text())
        (tmp / "summary.txt").write_text(_summary(summary))
    sys.stdout.write(_summary(summary))


def _run_config(run: Path) -> EncoderConfig:
    return load_config(run / "config.txt")


def cmd_visualize(args) -> None:
    run = Path(args.run)
    cfg = _run_config(run)
    traj = Trajectory.from_json((run / "trajectory.json").read_text())
    groups = recover_groups(traj)
    images = render_masks(groups, cfg.frames, cfg.height, cfg.width, cfg.patch_size, seed=args.seed or 0)
    with staged(Path(args.out)) as tmp:
        for i, img in enumerate(images):
            write_ppm(tmp / f"frame_{i:03d}.ppm", img)
        (tmp / "frames.txt").write_text(groups.frames_text())
    print(f"wrote {len(images)} masks to {args.out}")


def cmd_probe(args) -> None:
    traj = Trajectory.from_json((Path(args.run) / "trajectory.json").read_text())
    text = probe_csv(similarity_probe(traj))
    if args.out:
        with staged(Path(args.out)) as tmp:
            (tmp / "probe.csv").write_text(text)
    sys.stdout.write(text)


def _ints(s: str) -> list[int]:
    return [int(v) for v in s.split(",") if v.strip()]


def cmd_flops(args) -> None:
    if args.config:
        cfg = _overrides(load_config(args.config), args)
    else:
        cfg = costmodel.reference_config(args.frames or 96, dim=args.dim, blocks=args.blocks,
                                     clamp=args.clamp, strategy=args.strategy or "geometry")
        rt = 0 if args.no_agg else (args.rt if args.rt is not None else (4 if cfg.frames >= 96 else 1))
        rs = 0 if args.no_agg else (args.rs if args.rs is not None else (8 if cfg.frames >= 96 else 12))
        cfg = dataclasses.replace(cfg, r_t=rt, r_s=rs)
    base = costmodel.flops_divided(dataclasses.replace(cfg, r_t=0, r_s=0))
    reports = [base]
    if args.sweep_rt or args.sweep_rs:
        rts = _ints(args.sweep_rt) if args.sweep_rt else [cfg.r_t]
        rss = _ints(args.sweep_rs) if args.sweep_rs else [cfg.r_s]
        reports += costmodel.sweep(cfg, [(a, b) for a in rts for b in rss])
    else:
        reports.append(costmodel.flops_divided(cfg))
    if args.joint is not None:
        reports.append(costmodel.flops_joint(dataclasses.replace(cfg, r_t=0, r_s=0), args.joint))
    sys.stdout.write(costmodel.to_csv(reports))
    agg = costmodel.flops_divided(cfg)
    print(f"ratio = {agg.total / base.total:.4f}")
    if args.out:
        with staged(Path(args.out)) as tmp:
            (tmp / "flops.csv").write_text(costmodel.to_csv(reports))


def cmd_ablate(args) -> None:
    groups = [g for g, on in (("reduction", args.pruning), ("strategy", args.strategies),
                              ("dimension", args.dimension)) if on]
    groups = groups or ["reduction", "strategy", "dimension"]
    desk = ablation.desk_config(frames=args.frames or 96, size=args.size, dim=args.dim,
                                heads=args.heads, blocks=args.blocks, seed=args.seed or 0)
    results = ablation.run(groups, desk=desk, sigma=args.sigma, encode_rows=not args.flops_only)
    text = ablation.to_csv(results)
    if args.out:
        with staged(Path(args.out)) as tmp:
            (tmp / "ablation.csv").write_text(text)
    sys.stdout.write(text)


def cmd_validate(args) -> None:
    cfg = validate_config(args.config)
    sys.stdout.write(cfg.to_text())


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tsagg", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def agg_flags(sp, frames=True):
        sp.add_argument("--seed", type=int)
        sp.add_argument("--strategy", choices=["importance", "geometry"])
        sp.add_argument("--rt", type=int, help="frames merged per block")
        sp.add_argument("--rs", type=int, help="patches merged per block")
        if frames:
            sp.add_argument("--frames", type=int)
        sp.add_argument("--no-agg", action="store_true", help="disable aggregation (R_T = R_S = 0)")
        sp.add_argument("--clamp", action="store_true", help="cap R so no dimension drops below 1")
        sp.add_argument("--weighting", choices=["sized", "pairwise"])
        sp.add_argument("--spatial-plan", choices=["shared", "per-frame"])
        sp.add_argument("--reduction", choices=["merge", "prune"])

    sp = sub.add_parser("synth", help="generate a planted synthetic video")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--frames", type=int)
    sp.add_argument("--height", type=int, default=224)
    sp.add_argument("--width", type=int, default=224)
    sp.add_argument("--patch", type=int, default=16)
    sp.add_argument("--segments", type=int, default=4)
    sp.add_argument("--regions", type=int, default=8)
    sp.add_argument("--sigma", type=float, default=0.02)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("encode", help="encode a video with token aggregation")
    sp.add_argument("--config", required=True)
    sp.add_argument("--video", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--weights", help="tensor file of model weights (default: seeded random)")
    agg_flags(sp)
    sp.set_defaults(func=cmd_encode)

    sp = sub.add_parser("flops", help="analytic FLOP tables")
    sp.add_argument("--config")
    sp.add_argument("--out")
    sp.add_argument("--dim", type=int, default=768)
    sp.add_argument("--blocks", type=int, default=12)
    sp.add_argument("--joint", type=int, metavar="R", help="add a joint-attention row merging R tokens per block")
    sp.add_argument("--sweep-rt", help="comma-separated R_T values")
    sp.add_argument("--sweep-rs", help="comma-separated R_S values")
    agg_flags(sp)
    sp.set_defaults(func=cmd_flops)

    sp = sub.add_parser("ablate", help="reduction / strategy / dimension ablation tables")
    sp.add_argument("--out")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--dimension", action="store_true", help="only temporal / only spatial / both rows")
    sp.add_argument("--strategies", action="store_true", help="importance vs geometry rows")
    sp.add_argument("--pruning", action="store_true", help="pruning vs aggregation rows")
    sp.add_argument("--frames", type=int)
    sp.add_argument("--size", type=int, default=224)
    sp.add_argument("--dim", type=int, default=32)
    sp.add_argument("--heads", type=int, default=2)
    sp.add_argument("--blocks", type=int, default=12)
    sp.add_argument("--sigma", type=float, default=0.02)
    sp.add_argument("--flops-only", action="store_true", help="skip the desk-scale encodes")
    sp.set_defaults(func=cmd_ablate)

    sp = sub.add_parser("visualize", help="render merge masks of an encode run")
    sp.add_argument("--run", required=True, help="output directory of `encode`")
    sp.add_argument("--out", required=True)
    sp.add_argument("--seed", type=int)
    sp.set_defaults(func=cmd_visualize)

    sp = sub.add_parser("probe", help="merged vs unmerged similarity per block")
    sp.add_argument("--run", required=True, help="output directory of `encode`")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_probe)

    sp = sub.add_parser("validate", help="check a config file and print its normalized form")
    sp.add_argument("--config", required=True)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        for e in exc.errors:
            print(f"tsagg: config: {e}", file=sys.stderr)
        return 1
    except (OSError, FormatError, TrajectoryError, ValueError, CLIError) as exc:
        print(f"tsagg: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
