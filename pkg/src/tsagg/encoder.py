"""Divided space-time video encoder with per-block temporal and spatial
token aggregation.

Each block runs temporal attention, merges R_T frames, runs spatial
attention, merges R_S patches, then applies the feed-forward sublayer.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Literal

import numpy as np

from tsagg.aggregation import (
    MergePlan,
    apply_spatial,
    apply_temporal,
    importance_scores,
    make_plan,
    plan_prune,
)
from tsagg.attention import AttnStats, BlockWeights, feed_forward, spatial_attention, temporal_attention
from tsagg.tokenization import (
    EmbeddingWeights,
    RawVideo,
    TokenGrid,
    embed,
    patchify,
    read_tensors,
    write_tensors,
)
from tsagg.trajectory import BlockRecord, Trajectory

log = logging.getLogger(__name__)

_CHOICES = {
    "strategy": ("geometry", "importance"),
    "reduction": ("merge", "prune"),
    "merge_weighting": ("sized", "pairwise"),
    "spatial_plan": ("shared", "per_frame"),
}
_REQUIRED = ("frames", "height", "width", "patch_size", "dim", "heads", "blocks")


class ConfigError(ValueError):
    """One or more configuration problems, all reported together."""

    def __init__(self, errors: list[str]):
        self.errors = list(errors)
        super().__init__("invalid config:\n  " + "\n  ".join(self.errors))


@dataclass(frozen=True)
class EncoderConfig:
    frames: int
    height: int
    width: int
    patch_size: int
    dim: int
    heads: int
    blocks: int
    r_t: int = 0
    r_s: int = 0
    strategy: Literal["geometry", "importance"] = "geometry"
    reduction: Literal["merge", "prune"] = "merge"
    merge_weighting: Literal["sized", "pairwise"] = "sized"
    spatial_plan: Literal["shared", "per_frame"] = "shared"
    clamp: bool = False
    seed: int = 0

    @property
    def num_patches(self) -> int:
        return (self.height // self.patch_size) * (self.width // self.patch_size)

    @property
    def input_tokens(self) -> int:
        return self.frames * self.num_patches

    def _cap(self, r: int, n: int) -> int:
        cap = n - 1
        if self.reduction == "merge" and self.strategy == "geometry":
            cap = min(cap, n // 2)
        return max(0, min(r, cap))

    def schedule(self) -> list[tuple[int, int, int, int]]:
        """Per block: (R_T used, R_S used, frames after, patches after)."""
        t, l = self.frames, self.num_patches
        out = []
        for _ in range(self.blocks):
            rt = self._cap(self.r_t, t) if self.clamp else self.r_t
            rs = self._cap(self.r_s, l) if self.clamp else self.r_s
            t, l = t - rt, l - rs
            out.append((rt, rs, t, l))
        return out

    def final_shape(self) -> tuple[int, int]:
        if not self.blocks:
            return self.frames, self.num_patches
        _, _, t, l = self.schedule()[-1]
        return t, l

    def validate(self) -> list[str]:
        errs = []
        for name in ("frames", "height", "width", "patch_size", "dim", "heads", "blocks"):
            if getattr(self, name) < (0 if name == "blocks" else 1):
                errs.append(f"{name}: must be positive, got {getattr(self, name)}")
        for name in ("r_t", "r_s"):
            if getattr(self, name) < 0:
                errs.append(f"{name}: must be >= 0, got {getattr(self, name)}")
        for name, allowed in _CHOICES.items():
            if getattr(self, name) not in allowed:
                errs.append(f"{name}: must be one of {'|'.join(allowed)}, got {getattr(self, name)!r}")
        if self.patch_size >= 1:
            for name in ("height", "width"):
                if getattr(self, name) % self.patch_size:
                    errs.append(f"{name}: {getattr(self, name)} not divisible by patch_size {self.patch_size}")
        if self.heads >= 1 and self.dim % self.heads:
            errs.append(f"heads: {self.heads} does not divide dim {self.dim}")
        if errs or self.clamp:
            return errs

        halving = self.reduction == "merge" and self.strategy == "geometry"
        for name, start, r, label in (("r_t", self.frames, self.r_t, "frames"),
                                      ("r_s", self.num_patches, self.r_s, "patches")):
            if start - self.blocks * r < 1:
                errs.append(f"{name}: schedule violation, {label} {start} - {self.blocks}*{r} = "
                            f"{start - self.blocks * r} < 1 (set clamp = true to allow)")
                continue
            if halving and r:
                for i in range(self.blocks):
                    n = start - i * r
                    if r > n // 2:
                        errs.append(f"{name}: geometry merge of {r} exceeds half of {n} {label} at block {i + 1}")
                        break
        return errs

    # --- text form -------------------------------------------------------

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            v = getattr(self, f.name)
            lines.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EncoderConfig":
        types = {f.name: f.type for f in fields(cls)}
        values: dict = {}
        errs = []
        for no, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                errs.append(f"line {no}: expected 'key = value', got {raw.strip()!r}")
                continue
            key, val = (s.strip() for s in line.split("=", 1))
            if key not in types:
                errs.append(f"{key}: unknown key (line {no})")
                continue
            if key in values:
                errs.append(f"{key}: given more than once (line {no})")
                continue
            if types[key] in ("int", int):
                try:
                    values[key] = int(val)
                except ValueError:
                    errs.append(f"{key}: expected an integer, got {val!r}")
            elif types[key] in ("bool", bool):
                if val.lower() not in ("true", "false", "1", "0", "yes", "no"):
                    errs.append(f"{key}: expected true/false, got {val!r}")
                else:
                    values[key] = val.lower() in ("true", "1", "yes")
            else:
                values[key] = val.replace("-", "_")
        missing = [k for k in _REQUIRED if k not in values]
        if missing:
            errs.append("missing required fields: " + ", ".join(missing))
        if errs:
            raise ConfigError(errs)
        cfg = cls(**values)
        cfg.check()
        return cfg

    def check(self) -> None:
        errs = self.validate()
        if errs:
            raise ConfigError(errs)


def load_config(path: str | Path) -> EncoderConfig:
    return EncoderConfig.from_text(Path(path).read_text())


# --- weights ---------------------------------------------------------------

@dataclass
class ModelWeights:
    embedding: EmbeddingWeights
    blocks: list[BlockWeights]

    def tensors(self) -> dict[str, np.ndarray]:
        out = self.embedding.tensors()
        for i, b in enumerate(self.blocks):
            out.update(b.tensors(f"blocks.{i}."))
        return out

    def save(self, path: str | Path) -> None:
        write_tensors(path, self.tensors())

    @classmethod
    def load(cls, path: str | Path, cfg: EncoderConfig) -> "ModelWeights":
        t = read_tensors(path)
        emb = EmbeddingWeights.from_tensors(t)
        blocks = [BlockWeights.from_tensors(t, f"blocks.{i}.", cfg.heads) for i in range(cfg.blocks)]
        return cls(emb, blocks)


def init_weights(cfg: EncoderConfig) -> ModelWeights:
    rng = np.random.default_rng(cfg.seed)
    emb = EmbeddingWeights.random(rng, cfg.patch_size, cfg.num_patches, cfg.frames, cfg.dim)
    blocks = [BlockWeights.random(rng, cfg.dim, cfg.heads) for _ in range(cfg.blocks)]
    return ModelWeights(emb, blocks)


# --- encoding --------------------------------------------------------------

@dataclass
class BlockStats:
    temporal: AttnStats
    spatial: AttnStats


@dataclass
class EncodedVideo:
    grid: TokenGrid
    trajectory: Trajectory
    stats: list[BlockStats] = field(default_factory=list)

    @property
    def cls(self) -> np.ndarray:
        return self.grid.cls

    @property
    def num_tokens(self) -> int:
        t, l = self.grid.shape
        return t * l


def _plan(cfg: EncoderConfig, keys, attn, r: int) -> MergePlan:
    if cfg.reduction == "prune":
        return plan_prune(importance_scores(attn), r)
    return make_plan(cfg.strategy, keys, attn, r)


def encode_block(grid: TokenGrid, w: BlockWeights, cfg: EncoderConfig,
                 r_t: int, r_s: int) -> tuple[TokenGrid, BlockRecord, BlockStats]:
    rec = BlockRecord(shape_in=grid.shape)
    grid, t_stats = temporal_attention(grid, w)
    if r_t:
        rec.temporal = _plan(cfg, t_stats.keys, t_stats.attn, r_t)
        grid = apply_temporal(grid, rec.temporal, cfg.merge_weighting)
    grid, s_stats = spatial_attention(grid, w)
    if r_s:
        if cfg.spatial_plan == "per_frame":
            rec.spatial = [_plan(cfg, k, a, r_s) for k, a in zip(s_stats.frame_keys, s_stats.frame_attn)]
            grid = apply_spatial(grid, rec.spatial, cfg.merge_weighting)
        else:
            plan = _plan(cfg, s_stats.keys, s_stats.attn, r_s)
            rec.spatial = [plan]
            grid = apply_spatial(grid, plan, cfg.merge_weighting)
    grid = feed_forward(grid, w)
    rec.shape_out = grid.shape
    return grid, rec, BlockStats(t_stats, s_stats)


def encode(video: RawVideo, cfg: EncoderConfig, weights: ModelWeights | None = None,
           capture_stats: bool = False) -> EncodedVideo:
    """Encode ``video``; the final grid shape follows ``cfg.schedule()``."""
    cfg.check()
    if (video.frames, video.height, video.width) != (cfg.frames, cfg.height, cfg.width):
        raise ConfigError([f"video is {video.frames}x{video.height}x{video.width}, config expects "
                           f"{cfg.frames}x{cfg.height}x{cfg.width}"])
    if weights is None:
        weights = init_weights(cfg)
    if len(weights.blocks) != cfg.blocks:
        raise ConfigError([f"weights have {len(weights.blocks)} blocks, config has {cfg.blocks}"])

    grid = embed(patchify(video, cfg.patch_size), weights.embedding)
    traj = Trajectory(cfg.frames, cfg.num_patches)
    stats = []
    for i, ((rt, rs, t_out, l_out), w) in enumerate(zip(cfg.schedule(), weights.blocks)):
        grid, rec, st = encode_block(grid, w, cfg, rt, rs)
        assert grid.shape == (t_out, l_out), (grid.shape, (t_out, l_out))
        log.debug("block %d: %s -> %s", i + 1, rec.shape_in, rec.shape_out)
        traj.blocks.append(rec)
        if capture_stats:
            stats.append(st)
    return EncodedVideo(grid=grid, trajectory=traj, stats=stats)
