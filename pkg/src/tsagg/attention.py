"""Divided space-time attention blocks.

Temporal attention mixes the frames seen at one patch position; spatial
attention mixes the patches of one frame together with the shared [CLS]
token. Both sublayers are pre-norm and residual, and both hand back the keys
and head-averaged attention that the aggregation step plans merges from.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from tsagg.tensors import ACC, STORE, ShapeError, gelu, layer_norm, matmul, softmax_rows
from tsagg.tokenization import TokenGrid

_ATTN_KEYS = ("q", "k", "v", "o", "ln_g", "ln_b")
_FFN_KEYS = ("ln_g", "ln_b", "fc1", "b1", "fc2", "b2")


@dataclass
class AttnWeights:
    q: np.ndarray
    k: np.ndarray
    v: np.ndarray
    o: np.ndarray
    ln_g: np.ndarray
    ln_b: np.ndarray


@dataclass
class FFNWeights:
    ln_g: np.ndarray
    ln_b: np.ndarray
    fc1: np.ndarray  # (D, 4D)
    b1: np.ndarray
    fc2: np.ndarray  # (4D, D)
    b2: np.ndarray


@dataclass
class BlockWeights:
    temporal: AttnWeights
    spatial: AttnWeights
    ffn: FFNWeights
    heads: int

    def __post_init__(self):
        d = self.temporal.q.shape[0]
        if d % self.heads:
            raise ShapeError(f"{self.heads} heads do not divide dim {d}")

    @property
    def dim(self) -> int:
        return self.temporal.q.shape[0]

    @classmethod
    def random(cls, rng: np.random.Generator, dim: int, heads: int) -> "BlockWeights":
        def attn():
            mats = {n: (rng.standard_normal((dim, dim)) / np.sqrt(dim)).astype(STORE) for n in "qkvo"}
            return AttnWeights(**mats, ln_g=np.ones(dim, STORE), ln_b=np.zeros(dim, STORE))

        hidden = 4 * dim
        ffn = FFNWeights(
            ln_g=np.ones(dim, STORE),
            ln_b=np.zeros(dim, STORE),
            fc1=(rng.standard_normal((dim, hidden)) / np.sqrt(dim)).astype(STORE),
            b1=np.zeros(hidden, STORE),
            fc2=(rng.standard_normal((hidden, dim)) / np.sqrt(hidden)).astype(STORE),
            b2=np.zeros(dim, STORE),
        )
        return cls(temporal=attn(), spatial=attn(), ffn=ffn, heads=heads)

    def tensors(self, prefix: str) -> dict[str, np.ndarray]:
        out = {}
        for part in ("temporal", "spatial"):
            sub = getattr(self, part)
            out.update({f"{prefix}{part}.{n}": getattr(sub, n) for n in _ATTN_KEYS})
        out.update({f"{prefix}ffn.{n}": getattr(self.ffn, n) for n in _FFN_KEYS})
        return out

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], prefix: str, heads: int) -> "BlockWeights":
        def get(name):
            return np.asarray(tensors[prefix + name], STORE)

        return cls(
            temporal=AttnWeights(**{n: get(f"temporal.{n}") for n in _ATTN_KEYS}),
            spatial=AttnWeights(**{n: get(f"spatial.{n}") for n in _ATTN_KEYS}),
            ffn=FFNWeights(**{n: get(f"ffn.{n}") for n in _FFN_KEYS}),
            heads=heads,
        )


@dataclass
class AttnStats:
    """Keys and head-averaged attention summarised for one aggregation step.

    ``keys`` (N x D) and ``attn`` (N x N) describe the N tokens being
    planned over: frames after temporal attention, patches after spatial
    attention. ``full_attn`` keeps the [CLS] row/column for spatial stats.
    ``frame_keys``/``frame_attn`` hold the un-averaged per-frame spatial
    statistics used when every frame gets its own merge plan.
    """

    keys: np.ndarray
    attn: np.ndarray
    full_attn: np.ndarray
    frame_keys: np.ndarray | None = None
    frame_attn: np.ndarray | None = None


def multi_head(x: np.ndarray, w: AttnWeights, heads: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Self-attention over the second-to-last axis of ``x`` (..., N, D).

    Returns (output before residual, keys (..., N, D), attention (..., h, N, N)).
    """
    *batch, n, d = x.shape
    dh = d // heads
    y = layer_norm(x, w.ln_g, w.ln_b)
    q = matmul(y, w.q)
    k = matmul(y, w.k)
    v = matmul(y, w.v)

    def split(z):
        return np.moveaxis(z.reshape(*batch, n, heads, dh), -2, -3)

    scores = matmul(split(q), np.swapaxes(split(k), -1, -2))
    attn = softmax_rows(scores, scale=float(np.sqrt(dh)))
    ctx = matmul(attn, split(v))
    ctx = np.moveaxis(ctx, -3, -2).reshape(*batch, n, d)
    return matmul(ctx, w.o), k, attn


def temporal_attention(grid: TokenGrid, w: BlockWeights) -> tuple[TokenGrid, AttnStats]:
    """Attend across frames independently at every patch position."""
    x = np.swapaxes(grid.features, 0, 1)  # (L, T, D)
    out, keys, attn = multi_head(x, w.temporal, w.heads)
    feats = (grid.features.astype(ACC) + np.swapaxes(out, 0, 1)).astype(STORE)

    # frame-level keys: size-weighted mean over positions of each frame's keys
    size = grid.token_size.T[:, :, None]  # (L, T, 1)
    frame_keys = (keys.astype(ACC) * size).sum(axis=0) / size.sum(axis=0)
    frame_attn = attn.astype(ACC).mean(axis=(0, 1))
    stats = AttnStats(keys=frame_keys.astype(STORE), attn=frame_attn, full_attn=frame_attn)
    return grid.with_features(feats), stats


def spatial_attention(grid: TokenGrid, w: BlockWeights) -> tuple[TokenGrid, AttnStats]:
    """Attend across the patches of each frame, with [CLS] prepended to each."""
    t, _, d = grid.features.shape
    cls = np.broadcast_to(grid.cls, (t, 1, d))
    x = np.concatenate([cls, grid.features], axis=1)  # (T, 1 + L, D)
    out, keys, attn = multi_head(x, w.spatial, w.heads)
    feats = (grid.features.astype(ACC) + out[:, 1:]).astype(STORE)
    cls_new = (grid.cls.astype(ACC) + out[:, 0].astype(ACC).mean(axis=0)).astype(STORE)

    per_frame_attn = attn.astype(ACC).mean(axis=1)  # (T, 1 + L, 1 + L)
    full = per_frame_attn.mean(axis=0)
    stats = AttnStats(
        keys=keys[:, 1:].astype(ACC).mean(axis=0).astype(STORE),
        attn=full[1:, 1:],
        full_attn=full,
        frame_keys=keys[:, 1:],
        frame_attn=per_frame_attn[:, 1:, 1:],
    )
    new = grid.with_features(feats)
    new.cls = cls_new
    return new, stats


def feed_forward(grid: TokenGrid, w: BlockWeights) -> TokenGrid:
    f = w.ffn
    y = layer_norm(grid.features, f.ln_g, f.ln_b)
    h = gelu(matmul(y, f.fc1).astype(ACC) + f.b1)
    out = matmul(h, f.fc2).astype(ACC) + f.b2
    return grid.with_features((grid.features.astype(ACC) + out).astype(STORE))
