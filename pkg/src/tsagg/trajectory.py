"""Merge trajectories: record, replay into constituent groups, render masks,
and summarise the similarity of merged vs unmerged candidate pairs."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from tsagg.aggregation import MergePlan

Cell = tuple[int, int]


class TrajectoryError(ValueError):
    """Replaying the recorded plans is inconsistent."""


@dataclass
class BlockRecord:
    temporal: MergePlan | None = None
    # one plan shared by all frames, or one plan per frame
    spatial: list[MergePlan] | None = None
    shape_in: tuple[int, int] = (0, 0)
    shape_out: tuple[int, int] = (0, 0)

    def to_dict(self) -> dict:
        return {
            "temporal": None if self.temporal is None else self.temporal.to_dict(),
            "spatial": None if self.spatial is None else [p.to_dict() for p in self.spatial],
            "shape_in": list(self.shape_in),
            "shape_out": list(self.shape_out),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BlockRecord":
        return cls(
            temporal=None if d["temporal"] is None else MergePlan.from_dict(d["temporal"]),
            spatial=None if d["spatial"] is None else [MergePlan.from_dict(p) for p in d["spatial"]],
            shape_in=tuple(d["shape_in"]),
            shape_out=tuple(d["shape_out"]),
        )


@dataclass
class Trajectory:
    frames: int
    patches: int
    blocks: list[BlockRecord] = field(default_factory=list)

    def to_json(self) -> str:
        body = {"frames": self.frames, "patches": self.patches,
                "blocks": [b.to_dict() for b in self.blocks]}
        return json.dumps(body, sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "Trajectory":
        d = json.loads(text)
        return cls(d["frames"], d["patches"], [BlockRecord.from_dict(b) for b in d["blocks"]])


@dataclass
class GroupMap:
    """Original cells behind every final token and original frames behind
    every final frame."""

    frame_groups: list[frozenset[int]]
    token_groups: list[list[frozenset[Cell]]]  # [t'][l']

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.token_groups), len(self.token_groups[0]) if self.token_groups else 0

    def cells(self) -> Iterable[tuple[int, int, frozenset[Cell]]]:
        for t, row in enumerate(self.token_groups):
            for l, g in enumerate(row):
                yield t, l, g

    def sizes(self) -> np.ndarray:
        return np.array([[len(g) for g in row] for row in self.token_groups], dtype=np.int64)

    def check_partition(self, frames: int, patches: int, complete: bool = True) -> None:
        seen: set[Cell] = set()
        total = 0
        for _, _, g in self.cells():
            total += len(g)
            seen |= g
        if len(seen) != total:
            raise TrajectoryError("token groups overlap")
        if complete and len(seen) != frames * patches:
            raise TrajectoryError(f"token groups cover {len(seen)} of {frames * patches} cells")

    def to_text(self) -> str:
        lines = []
        for t, l, g in self.cells():
            members = " ".join(f"({a},{b})" for a, b in sorted(g))
            lines.append(f"{t} {l} : {members}")
        return "\n".join(lines) + "\n"

    def frames_text(self) -> str:
        return "".join(f"{t} : {' '.join(map(str, sorted(g)))}\n"
                       for t, g in enumerate(self.frame_groups))


def _merge_groups(groups: list, plan: MergePlan) -> list:
    out: list = [None] * plan.n_out
    for old, new in enumerate(plan.remap()):
        if new < 0:
            continue
        out[new] = groups[old] if out[new] is None else out[new] | groups[old]
    return out


def recover_groups(traj: Trajectory) -> GroupMap:
    """Replay every recorded plan over index sets."""
    t_cur, l_cur = traj.frames, traj.patches
    frames = [frozenset([t]) for t in range(t_cur)]
    tokens = [[frozenset([(t, l)]) for l in range(l_cur)] for t in range(t_cur)]
    pruned = False
    for i, rec in enumerate(traj.blocks):
        if rec.temporal is not None:
            p = rec.temporal
            if p.n != t_cur:
                raise TrajectoryError(f"block {i}: temporal plan over {p.n} frames, have {t_cur}")
            pruned |= bool(p.dropped)
            frames = _merge_groups(frames, p)
            by_pos = [_merge_groups([row[l] for row in tokens], p) for l in range(l_cur)]
            tokens = [list(col) for col in zip(*by_pos)]
            t_cur = p.n_out
        if rec.spatial is not None:
            plans = rec.spatial if len(rec.spatial) != 1 else rec.spatial * t_cur
            if len(plans) != t_cur:
                raise TrajectoryError(f"block {i}: {len(plans)} spatial plans for {t_cur} frames")
            if any(p.n != l_cur for p in plans):
                raise TrajectoryError(f"block {i}: spatial plan does not match {l_cur} patches")
            if len({p.n_out for p in plans}) != 1:
                raise TrajectoryError(f"block {i}: per-frame plans disagree on output size")
            pruned |= any(p.dropped for p in plans)
            tokens = [_merge_groups(row, p) for row, p in zip(tokens, plans)]
            l_cur = plans[0].n_out
        if rec.shape_out != (0, 0) and rec.shape_out != (t_cur, l_cur):
            raise TrajectoryError(f"block {i}: recorded shape {rec.shape_out}, replay gives {(t_cur, l_cur)}")
    gm = GroupMap(frame_groups=frames, token_groups=tokens)
    gm.check_partition(traj.frames, traj.patches, complete=not pruned)
    return gm


# --- masks --------------------------------------------------------------------

def palette(n: int, seed: int = 0) -> np.ndarray:
    """``n`` distinct 24-bit colors, deterministic in ``seed``."""
    codes = np.random.default_rng(seed).choice(1 << 24, size=n, replace=False)
    return np.stack([(codes >> 16) & 255, (codes >> 8) & 255, codes & 255], axis=1).astype(np.uint8)


def render_masks(groups: GroupMap, frames: int, height: int, width: int, patch: int,
                 seed: int = 0) -> list[np.ndarray]:
    """One (H, W, 3) uint8 image per final frame.

    Each tile is filled with the color of the final token that absorbed it,
    with a darker border of the same hue, so merged tiles share both colors.
    """
    gw = width // patch
    t_out, l_out = groups.shape
    colors = palette(t_out * l_out, seed)
    owner: dict[Cell, int] = {}
    for t, l, g in groups.cells():
        for cell in g:
            owner[cell] = t * l_out + l
    images = []
    for t, fg in enumerate(groups.frame_groups):
        ref = min(fg)
        img = np.zeros((height, width, 3), dtype=np.uint8)
        for l in range((height // patch) * gw):
            tid = owner.get((ref, l))
            if tid is None:  # pruned tile
                continue
            y, x = (l // gw) * patch, (l % gw) * patch
            tile = img[y:y + patch, x:x + patch]
            tile[...] = colors[tid] // 2
            if patch > 2:
                tile[1:-1, 1:-1] = colors[tid]
        images.append(img)
    return images


def write_ppm(path: str | Path, image: np.ndarray) -> None:
    h, w, _ = image.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(np.ascontiguousarray(image, dtype=np.uint8).tobytes())


def read_ppm(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(b"\n", 3)
    if parts[0] != b"P6" or parts[2] != b"255":
        raise ValueError(f"{path}: not a binary 8-bit PPM")
    w, h = map(int, parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8).reshape(h, w, 3)


# --- similarity probe -----------------------------------------------------------

@dataclass
class ProbeRow:
    block: int
    kind: str  # "frame" or "patch"
    merged_mean: float
    merged_n: int
    unmerged_mean: float
    unmerged_n: int


def similarity_probe(traj: Trajectory) -> list[ProbeRow]:
    """Mean key similarity of matched A-B pairs per block, split by whether
    the pair was merged. Means of empty sets are NaN."""
    rows = []
    for i, rec in enumerate(traj.blocks):
        for kind, plans in (("frame", [rec.temporal] if rec.temporal else []),
                            ("patch", rec.spatial or [])):
            cands = [c for p in plans for c in p.candidates]
            if not cands:
                continue
            merged = [c.sim for c in cands if c.merged]
            unmerged = [c.sim for c in cands if not c.merged]
            rows.append(ProbeRow(
                block=i,
                kind=kind,
                merged_mean=float(np.mean(merged)) if merged else float("nan"),
                merged_n=len(merged),
                unmerged_mean=float(np.mean(unmerged)) if unmerged else float("nan"),
                unmerged_n=len(unmerged),
            ))
    return rows


PROBE_HEADER = "block,kind,merged_mean,merged_n,unmerged_mean,unmerged_n"


def probe_csv(rows: list[ProbeRow]) -> str:
    out = [PROBE_HEADER]
    for r in rows:
        out.append(f"{r.block},{r.kind},{r.merged_mean:.6f},{r.merged_n},{r.unmerged_mean:.6f},{r.unmerged_n}")
    return "\n".join(out) + "\n"
