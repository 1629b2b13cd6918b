"""Analytic FLOP accounting for divided and joint space-time encoders.

A fused multiply-add counts as 2 operations. Softmax, normalisation and
activation costs are left out; they are well under 1% at ViT-B shapes.
All arithmetic is on Python ints, so totals are exact.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from tsagg.encoder import EncoderConfig

DIVIDED_TERMS = (
    "temporal_qkv", "temporal_scores", "temporal_values",
    "spatial_qkv", "spatial_scores", "spatial_values",
    "ffn", "similarity_overhead",
)
JOINT_TERMS = ("joint_qkv", "joint_scores", "joint_values", "ffn", "similarity_overhead")
CONFIG_COLUMNS = ("mode", "frames", "patches", "dim", "blocks", "r_t", "r_s", "r_joint")


@dataclass
class FlopReport:
    mode: str  # "divided" or "joint"
    cfg: EncoderConfig
    terms: tuple[str, ...]
    blocks: list[dict[str, int]] = field(default_factory=list)
    schedule: list[tuple[int, int]] = field(default_factory=list)  # tokens entering each block
    r_joint: int = 0

    def breakdown(self) -> dict[str, int]:
        return {k: sum(b[k] for b in self.blocks) for k in self.terms}

    @property
    def total(self) -> int:
        return sum(sum(b.values()) for b in self.blocks)

    @property
    def gflops(self) -> float:
        return self.total / 1e9

    def attention_cost(self) -> int:
        """Score and value products only (the part that scales with sequence length squared)."""
        return sum(v for k, v in self.breakdown().items() if k.endswith(("_scores", "_values")))

    def row(self) -> dict[str, object]:
        c = self.cfg
        out = {"mode": self.mode, "frames": c.frames, "patches": c.num_patches, "dim": c.dim,
               "blocks": c.blocks, "r_t": c.r_t, "r_s": c.r_s, "r_joint": self.r_joint}
        out.update(self.breakdown())
        out["total"] = self.total
        return out


def _divided_block(t: int, l: int, d: int, rt: int, rs: int, similarity: bool = True) -> dict[str, int]:
    t2, l2 = t - rt, l - rs
    sim = (t * t * d if rt else 0) + (l * l * d if rs else 0)
    return {
        "temporal_qkv": 8 * t * l * d * d,
        "temporal_scores": 2 * l * t * t * d,
        "temporal_values": 2 * l * t * t * d,
        "spatial_qkv": 8 * t2 * l * d * d,
        "spatial_scores": 2 * t2 * l * l * d,
        "spatial_values": 2 * t2 * l * l * d,
        "ffn": 16 * t2 * l2 * d * d,
        "similarity_overhead": sim if similarity else 0,
    }


def flops_divided(cfg: EncoderConfig) -> FlopReport:
    """Cost of the divided encoder under the config's token schedule.

    Within a block, spatial attention already sees the frames left after
    temporal merging, and the feed-forward sees both reductions. Pruning
    skips the key-similarity computation.
    """
    cfg.check()
    rep = FlopReport("divided", cfg, DIVIDED_TERMS)
    t, l = cfg.frames, cfg.num_patches
    for rt, rs, t_out, l_out in cfg.schedule():
        rep.schedule.append((t, l))
        rep.blocks.append(_divided_block(t, l, cfg.dim, rt, rs, cfg.reduction == "merge"))
        t, l = t_out, l_out
    return rep


def flops_joint(cfg: EncoderConfig, r_joint: int = 0) -> FlopReport:
    """Cost of joint space-time attention over all T*L tokens, optionally
    removing ``r_joint`` tokens per block by global bipartite merging."""
    cfg.check()
    rep = FlopReport("joint", cfg, JOINT_TERMS, r_joint=r_joint)
    n, d = cfg.input_tokens, cfg.dim
    for _ in range(cfg.blocks):
        r = min(r_joint, n // 2)
        rep.schedule.append((n, 1))
        rep.blocks.append({
            "joint_qkv": 8 * n * d * d,
            "joint_scores": 2 * n * n * d,
            "joint_values": 2 * n * n * d,
            "ffn": 16 * (n - r) * d * d,
            "similarity_overhead": (n // 2) * ((n + 1) // 2) * d if r else 0,
        })
        n -= r
    return rep


def sweep(cfg: EncoderConfig, points: Iterable[tuple[int, int]]) -> list[FlopReport]:
    return [flops_divided(dataclasses.replace(cfg, r_t=rt, r_s=rs)) for rt, rs in points]


def to_csv(reports: Sequence[FlopReport]) -> str:
    terms: list[str] = []
    for r in reports:
        terms += [t for t in r.terms if t not in terms]
    header = list(CONFIG_COLUMNS) + terms + ["total"]
    lines = [",".join(header)]
    for r in reports:
        row = r.row()
        lines.append(",".join(str(row.get(k, 0)) for k in header))
    return "\n".join(lines) + "\n"


def reference_config(frames: int = 96, r_t: int = 0, r_s: int = 0, **overrides) -> EncoderConfig:
    """ViT-B/16 at 224x224 with 12 blocks."""
    base = dict(frames=frames, height=224, width=224, patch_size=16, dim=768, heads=12,
                blocks=12, r_t=r_t, r_s=r_s)
    base.update(overrides)
    return EncoderConfig(**base)
