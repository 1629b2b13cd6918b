"""Synthetic videos with planted temporal segments and spatial regions.

Every (segment, region) pair is one ground-truth cluster with its own base
color; pixels get bounded uniform noise. Regions are unions of whole patch
tiles so each patch belongs to exactly one cluster.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from tsagg.tokenization import RawVideo
from tsagg.trajectory import GroupMap


@dataclass
class PlantedSpec:
    segments: np.ndarray  # (T,) segment label per frame, non-decreasing from 0
    regions: np.ndarray  # (H/P, W/P) region label per tile
    colors: np.ndarray  # (n_segments, n_regions, 3) in [0, 1]
    sigma: float
    patch: int

    def __post_init__(self):
        self.segments = np.asarray(self.segments, dtype=np.int64)
        self.regions = np.asarray(self.regions, dtype=np.int64)
        self.colors = np.asarray(self.colors, dtype=np.float64)
        n_seg, n_reg = self.colors.shape[:2]
        if self.sigma < 0:
            raise ValueError("sigma must be >= 0")
        if np.any(np.diff(self.segments) < 0) or set(self.segments.tolist()) != set(range(n_seg)):
            raise ValueError("segments must be contiguous labels 0..n_segments-1")
        if set(self.regions.ravel().tolist()) != set(range(n_reg)):
            raise ValueError("regions must use every label 0..n_regions-1")

    @property
    def frames(self) -> int:
        return len(self.segments)

    @property
    def height(self) -> int:
        return self.regions.shape[0] * self.patch

    @property
    def width(self) -> int:
        return self.regions.shape[1] * self.patch

    def cluster_labels(self) -> np.ndarray:
        """(T, L) cluster id of every original (frame, patch) cell."""
        n_reg = self.colors.shape[1]
        return self.segments[:, None] * n_reg + self.regions.ravel()[None, :]

    def to_text(self) -> str:
        n_seg, n_reg = self.colors.shape[:2]
        cols = "; ".join(" ".join(f"{v:.9g}" for v in c) for c in self.colors.reshape(-1, 3))
        return "".join([
            f"frames = {self.frames}\n",
            f"height = {self.height}\n",
            f"width = {self.width}\n",
            f"patch = {self.patch}\n",
            f"sigma = {self.sigma!r}\n",
            f"n_segments = {n_seg}\n",
            f"n_regions = {n_reg}\n",
            f"segments = {' '.join(map(str, self.segments))}\n",
            f"regions = {' '.join(map(str, self.regions.ravel()))}\n",
            f"colors = {cols}\n",
        ])

    @classmethod
    def from_text(cls, text: str) -> "PlantedSpec":
        kv = dict((s.strip() for s in line.split("=", 1)) for line in text.splitlines() if "=" in line)
        patch = int(kv["patch"])
        gh, gw = int(kv["height"]) // patch, int(kv["width"]) // patch
        colors = np.array([[float(v) for v in c.split()] for c in kv["colors"].split(";")])
        return cls(
            segments=np.array(kv["segments"].split(), dtype=np.int64),
            regions=np.array(kv["regions"].split(), dtype=np.int64).reshape(gh, gw),
            colors=colors.reshape(int(kv["n_segments"]), int(kv["n_regions"]), 3),
            sigma=float(kv["sigma"]),
            patch=patch,
        )


def make_spec(frames: int, height: int, width: int, patch: int, n_segments: int,
              n_regions: int, sigma: float, seed: int = 0) -> PlantedSpec:
    """Random contiguous segments and Voronoi regions over the tile grid."""
    if not 1 <= n_segments <= frames:
        raise ValueError(f"need 1 <= n_segments <= {frames}")
    gh, gw = height // patch, width // patch
    if not 1 <= n_regions <= gh * gw:
        raise ValueError(f"need 1 <= n_regions <= {gh * gw}")
    rng = np.random.default_rng(seed)
    cuts = np.sort(rng.choice(np.arange(1, frames), size=n_segments - 1, replace=False))
    segments = np.searchsorted(cuts, np.arange(frames), side="right")
    centers = rng.choice(gh * gw, size=n_regions, replace=False)
    cy, cx = np.divmod(centers, gw)
    yy, xx = np.mgrid[0:gh, 0:gw]
    dist = (yy[..., None] - cy) ** 2 + (xx[..., None] - cx) ** 2
    regions = dist.argmin(axis=-1)
    colors = rng.uniform(0.1, 0.9, size=(n_segments, n_regions, 3))
    return PlantedSpec(segments, regions, colors, sigma, patch)


def generate(spec: PlantedSpec, seed: int = 0) -> tuple[RawVideo, np.ndarray]:
    """Render the video; returns it with the (T, L) cluster labels."""
    rng = np.random.default_rng(seed)
    tiles = spec.colors[spec.segments][:, spec.regions]  # (T, gh, gw, 3)
    base = np.repeat(np.repeat(tiles, spec.patch, axis=1), spec.patch, axis=2)
    noise = rng.uniform(-spec.sigma, spec.sigma, size=base.shape) if spec.sigma else 0.0
    pixels = np.clip(base + noise, 0.0, 1.0).astype(np.float32)
    return RawVideo(pixels), spec.cluster_labels()


def score_purity(groups: GroupMap, spec: PlantedSpec) -> float:
    """Share of original cells that sit in their group's majority cluster."""
    labels = spec.cluster_labels()
    t, l = labels.shape
    hit = 0
    for _, _, g in groups.cells():
        if g:
            counts = np.bincount([labels[a, b] for a, b in g])
            hit += int(counts.max())
    return hit / (t * l)


def write_truth(path: str | Path, spec: PlantedSpec) -> None:
    Path(path).write_text(spec.to_text())


def read_truth(path: str | Path) -> PlantedSpec:
    return PlantedSpec.from_text(Path(path).read_text())
