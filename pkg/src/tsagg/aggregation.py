"""Bipartite merge planning and application for frames and patches.

A plan is built over N tokens (frames or patches). Tokens in set A are
matched to their most similar token in set B by cosine similarity of their
attention keys; selected A tokens are folded into their match. Survivors
keep their original relative order. Ties always go to the lower index.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Sequence

import numpy as np

from tsagg.tensors import ACC, STORE, ShapeError, cosine_sim_matrix
from tsagg.tokenization import TokenGrid

Strategy = Literal["importance", "geometry"]
Weighting = Literal["sized", "pairwise"]
ORACLE_MAX_N = 12


class PlanError(ValueError):
    """A plan does not fit the tokens it is applied to, or R is out of range."""


class Candidate(NamedTuple):
    src: int
    dst: int
    sim: float
    merged: bool


@dataclass(frozen=True)
class MergePlan:
    """One aggregation step over ``n`` tokens.

    ``pairs`` holds (src, dst) token indices sorted by src; ``dropped`` lists
    tokens removed without merging (pruning). ``candidates`` records every
    A-side best match with its similarity, merged or not.
    """

    n: int
    pairs: tuple[tuple[int, int], ...]
    dropped: tuple[int, ...] = ()
    candidates: tuple[Candidate, ...] = field(default=(), compare=False)

    @property
    def removed(self) -> int:
        return len(self.pairs) + len(self.dropped)

    @property
    def n_out(self) -> int:
        return self.n - self.removed

    @property
    def kept(self) -> tuple[int, ...]:
        gone = {s for s, _ in self.pairs} | set(self.dropped)
        return tuple(i for i in range(self.n) if i not in gone)

    def remap(self) -> np.ndarray:
        """New index of every old token; merged sources map to their
        destination's new index, dropped tokens to -1."""
        out = np.full(self.n, -1, dtype=np.int64)
        for new, old in enumerate(self.kept):
            out[old] = new
        for s, d in self.pairs:
            out[s] = out[d]
        return out

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "pairs": [list(p) for p in self.pairs],
            "dropped": list(self.dropped),
            "candidates": [[c.src, c.dst, c.sim, c.merged] for c in self.candidates],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MergePlan":
        return cls(
            n=int(d["n"]),
            pairs=tuple((int(s), int(t)) for s, t in d["pairs"]),
            dropped=tuple(int(i) for i in d.get("dropped", ())),
            candidates=tuple(Candidate(int(a), int(b), float(s), bool(m))
                             for a, b, s, m in d.get("candidates", ())),
        )


def importance_scores(attn) -> np.ndarray:
    """Attention each token receives from all the others: column sums
    without the diagonal, ``S_i = sum_{j != i} A[j, i]``."""
    a = np.asarray(attn, dtype=ACC)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeError(f"attention must be square, got {a.shape}")
    return a.sum(axis=0) - np.diag(a)


def _best_matches(keys: np.ndarray, a_idx: np.ndarray, b_idx: np.ndarray):
    sim = cosine_sim_matrix(keys[a_idx], keys[b_idx])
    best = sim.argmax(axis=1)  # first max wins -> lower B index
    return b_idx[best], sim[np.arange(len(a_idx)), best]


def plan_importance(keys, scores, r: int) -> MergePlan:
    keys = np.asarray(keys)
    scores = np.asarray(scores, dtype=ACC)
    n = keys.shape[0]
    if scores.shape != (n,):
        raise ShapeError(f"{n} keys but scores of shape {scores.shape}")
    if not 1 <= r <= n - 1:
        raise PlanError(f"importance plan needs 1 <= R <= {n - 1}, got R={r}")
    order = np.argsort(scores, kind="stable")
    a_idx = np.sort(order[:r])
    b_idx = np.sort(order[r:])
    dst, sim = _best_matches(keys, a_idx, b_idx)
    cands = tuple(Candidate(int(a), int(b), float(s), True) for a, b, s in zip(a_idx, dst, sim))
    return MergePlan(n=n, pairs=tuple((c.src, c.dst) for c in cands), candidates=cands)


def plan_geometry(keys, r: int) -> MergePlan:
    keys = np.asarray(keys)
    n = keys.shape[0]
    if not 1 <= r <= n // 2:
        raise PlanError(f"geometry plan needs 1 <= R <= {n // 2}, got R={r}")
    a_idx = np.arange(0, n, 2)
    b_idx = np.arange(1, n, 2)
    dst, sim = _best_matches(keys, a_idx, b_idx)
    order = np.argsort(-sim, kind="stable")  # ties -> lower A index
    chosen = np.zeros(len(a_idx), dtype=bool)
    chosen[order[:r]] = True
    cands = tuple(Candidate(int(a), int(b), float(s), bool(m))
                  for a, b, s, m in zip(a_idx, dst, sim, chosen))
    pairs = tuple((c.src, c.dst) for c in cands if c.merged)
    return MergePlan(n=n, pairs=pairs, candidates=cands)


def plan_prune(scores, r: int) -> MergePlan:
    """Drop the ``r`` least important tokens (ties -> lower index)."""
    scores = np.asarray(scores, dtype=ACC)
    n = scores.shape[0]
    if not 0 <= r <= n - 1:
        raise PlanError(f"prune needs 0 <= R <= {n - 1}, got R={r}")
    dropped = np.sort(np.argsort(scores, kind="stable")[:r])
    return MergePlan(n=n, pairs=(), dropped=tuple(int(i) for i in dropped))


def make_plan(strategy: Strategy, keys, attn, r: int) -> MergePlan:
    if strategy == "geometry":
        return plan_geometry(keys, r)
    if strategy == "importance":
        return plan_importance(keys, importance_scores(attn), r)
    raise ValueError(f"unknown strategy {strategy!r}")


# --- application --------------------------------------------------------------

def _gather_matrix(plan: MergePlan) -> np.ndarray:
    g = np.zeros((plan.n_out, plan.n), dtype=ACC)
    remap = plan.remap()
    live = remap >= 0
    g[remap[live], np.nonzero(live)[0]] = 1.0
    return g


def _check(plan: MergePlan, n: int, what: str) -> None:
    if plan.n != n:
        raise PlanError(f"stale plan: built for {plan.n} {what}, grid has {n}")


def apply_spatial(grid: TokenGrid, plan: MergePlan | Sequence[MergePlan],
                  weighting: Weighting = "sized") -> TokenGrid:
    """Merge patches. A single plan is shared by every frame; a sequence
    supplies one plan per frame."""
    t, l, d = grid.features.shape
    plans = [plan] * t if isinstance(plan, MergePlan) else list(plan)
    if len(plans) != t:
        raise PlanError(f"{len(plans)} spatial plans for {t} frames")
    for p in plans:
        _check(p, l, "patches")
    if len({p.n_out for p in plans}) != 1:
        raise PlanError("per-frame plans must remove the same number of patches")

    feats = grid.features.astype(ACC)
    w = grid.token_size if weighting == "sized" else np.ones_like(grid.token_size)
    if isinstance(plan, MergePlan):
        g = _gather_matrix(plan)
        num = np.einsum("nl,tld->tnd", g, feats * w[:, :, None])
        den = np.einsum("nl,tl->tn", g, w)
        size = np.einsum("nl,tl->tn", g, grid.token_size)
    else:
        gs = np.stack([_gather_matrix(p) for p in plans])  # (T, L', L)
        num = np.einsum("tnl,tld->tnd", gs, feats * w[:, :, None])
        den = np.einsum("tnl,tl->tn", gs, w)
        size = np.einsum("tnl,tl->tn", gs, grid.token_size)
    return TokenGrid(
        features=(num / den[:, :, None]).astype(STORE),
        token_size=size,
        frame_size=grid.frame_size.copy(),
        cls=grid.cls,
    )


def apply_temporal(grid: TokenGrid, plan: MergePlan, weighting: Weighting = "sized") -> TokenGrid:
    """Merge whole frames: patch l of a source frame folds into patch l of
    its destination frame."""
    _check(plan, grid.num_frames, "frames")
    g = _gather_matrix(plan)
    mass = grid.mass()
    w = mass if weighting == "sized" else np.ones_like(mass)
    num = np.einsum("nt,tld->nld", g, grid.features.astype(ACC) * w[:, :, None])
    den = g @ w
    frame_size = g @ grid.frame_size
    return TokenGrid(
        features=(num / den[:, :, None]).astype(STORE),
        token_size=(g @ mass) / frame_size[:, None],
        frame_size=frame_size,
        cls=grid.cls,
    )


def prune(grid: TokenGrid, scores, r: int, dimension: Literal["temporal", "spatial"]) -> TokenGrid:
    """Remove the ``r`` lowest-scoring frames or patches outright."""
    plan = plan_prune(scores, r)
    if dimension == "temporal":
        return apply_temporal(grid, plan)
    if dimension == "spatial":
        return apply_spatial(grid, plan)
    raise ValueError(f"unknown dimension {dimension!r}")


# --- exhaustive oracle ------------------------------------------------------------

def _cos(x: Sequence[float], y: Sequence[float]) -> float:
    nx = math.sqrt(math.fsum(v * v for v in x))
    ny = math.sqrt(math.fsum(v * v for v in y))
    if nx == 0.0 or ny == 0.0:
        return 0.0
    return math.fsum(a * b for a, b in zip(x, y)) / (nx * ny)


def oracle_best_pairs(keys, partition: Strategy, r: int, scores=None) -> MergePlan:
    """Exhaustive reference for :func:`plan_geometry` / :func:`plan_importance`.

    Enumerates every candidate set of R sources instead of sorting, scans
    every destination in plain Python, and applies the same tie-breaking.
    Only for tiny inputs.
    """
    rows = [[float(v) for v in row] for row in np.asarray(keys)]
    n = len(rows)
    if n > ORACLE_MAX_N:
        raise PlanError(f"oracle refuses N={n} > {ORACLE_MAX_N}")

    def best(a: int, bs: Sequence[int]) -> tuple[int, float]:
        top, top_sim = -1, -math.inf
        for b in bs:
            s = _cos(rows[a], rows[b])
            if s > top_sim:
                top, top_sim = b, s
        return top, top_sim

    if partition == "geometry":
        if not 1 <= r <= n // 2:
            raise PlanError(f"geometry plan needs 1 <= R <= {n // 2}, got R={r}")
        a_side = list(range(0, n, 2))
        b_side = list(range(1, n, 2))
        matches = {a: best(a, b_side) for a in a_side}
        chosen, chosen_key = None, None
        for subset in itertools.combinations(a_side, r):
            key = sorted((matches[a][1] for a in subset), reverse=True)
            if chosen_key is None or key > chosen_key:
                chosen, chosen_key = subset, key
    elif partition == "importance":
        if scores is None:
            raise ValueError("importance partition needs scores")
        sc = [float(s) for s in scores]
        if not 1 <= r <= n - 1:
            raise PlanError(f"importance plan needs 1 <= R <= {n - 1}, got R={r}")
        chosen, chosen_key = None, None
        for subset in itertools.combinations(range(n), r):
            key = sorted(sc[i] for i in subset)
            if chosen_key is None or key < chosen_key:
                chosen, chosen_key = subset, key
        rest = [i for i in range(n) if i not in chosen]
        matches = {a: best(a, rest) for a in chosen}
    else:
        raise ValueError(f"unknown partition {partition!r}")

    return MergePlan(n=n, pairs=tuple((a, matches[a][0]) for a in chosen))
