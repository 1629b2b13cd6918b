"""Patchify raw videos, embed patches, and read/write the binary formats.

Binary layouts (all little-endian):

* video file: ``b"TSTV"``, u32 T, u32 H, u32 W, then T*H*W*3 float32 values
  in (frame, row, column, channel) order.
* tensor file: ``b"TSTW"``, u32 count, then per tensor: u32 name length,
  UTF-8 name, u32 rank, rank x u32 dims, float32 values in C order.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping

import numpy as np

from tsagg.tensors import ACC, STORE, ShapeError, matmul

VIDEO_MAGIC = b"TSTV"
TENSOR_MAGIC = b"TSTW"


class FormatError(ValueError):
    """A binary file is malformed or has the wrong magic."""


@dataclass(frozen=True)
class RawVideo:
    pixels: np.ndarray  # (T, H, W, 3) float32 in [0, 1]

    def __post_init__(self):
        px = np.asarray(self.pixels, dtype=STORE)
        if px.ndim != 4 or px.shape[-1] != 3:
            raise ShapeError(f"video must be (T, H, W, 3), got {px.shape}")
        object.__setattr__(self, "pixels", px)

    @property
    def frames(self) -> int:
        return self.pixels.shape[0]

    @property
    def height(self) -> int:
        return self.pixels.shape[1]

    @property
    def width(self) -> int:
        return self.pixels.shape[2]


@dataclass
class TokenGrid:
    """Evolving (frames x patches x dim) token tensor with size bookkeeping.

    ``token_size[t, l] * frame_size[t]`` is the number of original
    (frame, patch) cells that token ``(t, l)`` stands for.
    """

    features: np.ndarray  # (T_i, L_i, D) float32
    token_size: np.ndarray  # (T_i, L_i) float64
    frame_size: np.ndarray  # (T_i,) float64
    cls: np.ndarray  # (D,) float32

    @classmethod
    def fresh(cls, features: np.ndarray, cls_token: np.ndarray) -> "TokenGrid":
        t, l, _ = features.shape
        return cls(
            features=np.asarray(features, dtype=STORE),
            token_size=np.ones((t, l), dtype=ACC),
            frame_size=np.ones(t, dtype=ACC),
            cls=np.asarray(cls_token, dtype=STORE),
        )

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def num_patches(self) -> int:
        return self.features.shape[1]

    @property
    def dim(self) -> int:
        return self.features.shape[2]

    @property
    def shape(self) -> tuple[int, int]:
        return self.num_frames, self.num_patches

    def mass(self) -> np.ndarray:
        """Constituent count per token, shape (T_i, L_i)."""
        return self.token_size * self.frame_size[:, None]

    def with_features(self, features: np.ndarray) -> "TokenGrid":
        return replace(self, features=np.asarray(features, dtype=STORE))


@dataclass
class EmbeddingWeights:
    projection: np.ndarray  # (3 P^2, D)
    spatial_pos: np.ndarray  # (L, D)
    temporal_pos: np.ndarray  # (T_max, D)
    cls_seed: np.ndarray  # (D,)

    @property
    def dim(self) -> int:
        return self.projection.shape[1]

    def tensors(self, prefix: str = "embed.") -> dict[str, np.ndarray]:
        return {
            prefix + "projection": self.projection,
            prefix + "spatial_pos": self.spatial_pos,
            prefix + "temporal_pos": self.temporal_pos,
            prefix + "cls_seed": self.cls_seed,
        }

    @classmethod
    def from_tensors(cls, tensors: Mapping[str, np.ndarray], prefix: str = "embed.") -> "EmbeddingWeights":
        return cls(**{k: np.asarray(tensors[prefix + k], STORE)
                      for k in ("projection", "spatial_pos", "temporal_pos", "cls_seed")})

    @classmethod
    def random(cls, rng: np.random.Generator, patch: int, num_patches: int,
               max_frames: int, dim: int) -> "EmbeddingWeights":
        fan_in = 3 * patch * patch
        return cls(
            projection=(rng.standard_normal((fan_in, dim)) / np.sqrt(fan_in)).astype(STORE),
            spatial_pos=(0.02 * rng.standard_normal((num_patches, dim))).astype(STORE),
            temporal_pos=(0.02 * rng.standard_normal((max_frames, dim))).astype(STORE),
            cls_seed=(0.02 * rng.standard_normal(dim)).astype(STORE),
        )


def patchify(video: RawVideo | np.ndarray, patch: int) -> np.ndarray:
    """Split each frame into raster-ordered P x P tiles, flattened channel-last.

    Returns an array of shape (T, H*W/P^2, 3*P^2).
    """
    px = video.pixels if isinstance(video, RawVideo) else np.asarray(video, STORE)
    t, h, w, c = px.shape
    if patch <= 0 or h % patch or w % patch:
        raise ShapeError(f"frame {h}x{w} is not divisible by patch size {patch}")
    gh, gw = h // patch, w // patch
    tiles = px.reshape(t, gh, patch, gw, patch, c).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(tiles.reshape(t, gh * gw, patch * patch * c))


def unpatchify(patches: np.ndarray, patch: int, height: int, width: int) -> np.ndarray:
    t = patches.shape[0]
    gh, gw = height // patch, width // patch
    tiles = patches.reshape(t, gh, gw, patch, patch, 3).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(tiles.reshape(t, height, width, 3))


def embed(patches: np.ndarray, weights: EmbeddingWeights) -> TokenGrid:
    """Linear patch embedding plus spatial and temporal position tables."""
    t, l, k = patches.shape
    if weights.projection.shape[0] != k:
        raise ShapeError(f"patch width {k} does not match projection {weights.projection.shape}")
    if weights.spatial_pos.shape[0] != l:
        raise ShapeError(f"{l} patches but spatial table has {weights.spatial_pos.shape[0]} rows")
    if t > weights.temporal_pos.shape[0]:
        raise ShapeError(f"{t} frames exceed temporal table size {weights.temporal_pos.shape[0]}")
    feats = (matmul(patches, weights.projection).astype(ACC)
             + weights.spatial_pos[None, :, :]
             + weights.temporal_pos[:t, None, :])
    return TokenGrid.fresh(feats.astype(STORE), weights.cls_seed.copy())


def frame_tokens(grid: TokenGrid) -> np.ndarray:
    """One pseudo token per frame: size-weighted mean of its patch tokens."""
    w = grid.token_size[:, :, None]
    out = (grid.features.astype(ACC) * w).sum(axis=1) / w.sum(axis=1)
    return out.astype(STORE)


# --- file formats -----------------------------------------------------------

def write_video(path: str | Path, video: RawVideo) -> None:
    t, h, w, _ = video.pixels.shape
    with open(path, "wb") as fh:
        fh.write(VIDEO_MAGIC)
        fh.write(struct.pack("<III", t, h, w))
        fh.write(video.pixels.astype("<f4").tobytes())


def read_video(path: str | Path) -> RawVideo:
    data = Path(path).read_bytes()
    if data[:4] != VIDEO_MAGIC:
        raise FormatError(f"{path}: not a video file (bad magic)")
    t, h, w = struct.unpack_from("<III", data, 4)
    n = t * h * w * 3
    if len(data) != 16 + 4 * n:
        raise FormatError(f"{path}: expected {16 + 4 * n} bytes, found {len(data)}")
    px = np.frombuffer(data, dtype="<f4", count=n, offset=16).reshape(t, h, w, 3)
    return RawVideo(px.astype(STORE))


def write_tensors(path: str | Path, tensors: Mapping[str, np.ndarray]) -> None:
    with open(path, "wb") as fh:
        fh.write(TENSOR_MAGIC)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            raw = name.encode("utf-8")
            fh.write(struct.pack("<I", len(raw)) + raw)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_tensors(path: str | Path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != TENSOR_MAGIC:
        raise FormatError(f"{path}: not a tensor file (bad magic)")
    (count,) = struct.unpack_from("<I", data, 4)
    pos = 8
    out: dict[str, np.ndarray] = {}
    try:
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", data, pos)
            name = data[pos + 4:pos + 4 + nlen].decode("utf-8")
            pos += 4 + nlen
            (rank,) = struct.unpack_from("<I", data, pos)
            dims = struct.unpack_from(f"<{rank}I", data, pos + 4)
            pos += 4 + 4 * rank
            n = int(np.prod(dims, dtype=np.int64))
            arr = np.frombuffer(data, dtype="<f4", count=n, offset=pos).reshape(dims)
            out[name] = arr.astype(STORE)
            pos += 4 * n
    except (struct.error, ValueError) as exc:
        raise FormatError(f"{path}: truncated tensor file") from exc
    if pos != len(data):
        raise FormatError(f"{path}: {len(data) - pos} trailing bytes")
    return out
