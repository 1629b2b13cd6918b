"""Ablation rows over reduction method, merge strategy and dimension.

FLOPs come from the analytic model at ViT-B/16 scale; constituent mass and
purity come from a real (small-width) encode of a planted synthetic video.
"""
from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass

from tsagg.costmodel import flops_divided, reference_config
from tsagg.encoder import EncoderConfig, encode
from tsagg.synthdata import generate, make_spec, score_purity
from tsagg.trajectory import recover_groups


@dataclass(frozen=True)
class Row:
    group: str
    label: str
    r_t: int
    r_s: int
    strategy: str = "geometry"
    reduction: str = "merge"


ROWS = {
    "reduction": [
        Row("reduction", "No aggregation", 0, 0),
        Row("reduction", "Token pruning (R_T=4, R_S=8)", 4, 8, "importance", "prune"),
        Row("reduction", "Token aggregation (R_T=4, R_S=8)", 4, 8),
    ],
    "strategy": [
        Row("strategy", "Importance-based aggregation", 4, 8, "importance"),
        Row("strategy", "Geometry-based aggregation", 4, 8, "geometry"),
    ],
    "dimension": [
        Row("dimension", "Only temporal (R_T=7)", 7, 0),
        Row("dimension", "Only spatial (R_S=14)", 0, 14),
        Row("dimension", "Both temporal and spatial (R_T=4, R_S=8)", 4, 8),
    ],
}

HEADER = ("group", "label", "strategy", "reduction", "r_t", "r_s", "gflops", "flop_ratio",
          "final_frames", "final_patches", "final_tokens", "mass", "purity")


@dataclass
class Result:
    row: Row
    gflops: float
    flop_ratio: float
    final_frames: int = 0
    final_patches: int = 0
    mass: float = float("nan")
    purity: float = float("nan")

    def fields(self) -> list:
        r = self.row
        return [r.group, r.label, r.strategy, r.reduction, r.r_t, r.r_s,
                f"{self.gflops:.1f}", f"{self.flop_ratio:.4f}", self.final_frames, self.final_patches,
                self.final_frames * self.final_patches, f"{self.mass:.1f}", f"{self.purity:.4f}"]


def desk_config(frames: int = 96, size: int = 224, dim: int = 32, heads: int = 2,
                blocks: int = 12, seed: int = 0) -> EncoderConfig:
    return EncoderConfig(frames=frames, height=size, width=size, patch_size=16, dim=dim,
                         heads=heads, blocks=blocks, clamp=True, seed=seed)


def run(groups=("reduction", "strategy", "dimension"), desk: EncoderConfig | None = None,
        frames_for_flops: int = 96, sigma: float = 0.02, segments: int = 6, regions: int = 10,
        encode_rows: bool = True) -> list[Result]:
    base = flops_divided(reference_config(frames_for_flops)).total
    video = spec = None
    if encode_rows:
        desk = desk or desk_config()
        spec = make_spec(desk.frames, desk.height, desk.width, desk.patch_size,
                         min(segments, desk.frames), min(regions, desk.num_patches), sigma, seed=desk.seed)
        video, _ = generate(spec, seed=desk.seed)

    out = []
    for g in groups:
        for row in ROWS[g]:
            total = flops_divided(reference_config(frames_for_flops, row.r_t, row.r_s, strategy=row.strategy,
                                              reduction=row.reduction)).total
            res = Result(row, gflops=total / 1e9, flop_ratio=total / base)
            if encode_rows:
                cfg = dataclasses.replace(desk, r_t=row.r_t, r_s=row.r_s,
                                          strategy=row.strategy, reduction=row.reduction)
                enc = encode(video, cfg)
                res.final_frames, res.final_patches = enc.grid.shape
                res.mass = float(enc.grid.mass().sum())
                res.purity = score_purity(recover_groups(enc.trajectory), spec)
            out.append(res)
    return out


def to_csv(results: list[Result]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HEADER)
    w.writerows(r.fields() for r in results)
    return buf.getvalue()
