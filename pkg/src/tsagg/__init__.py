"""Temporal-spatial token aggregation for divided space-time video transformers."""

from tsagg.aggregation import (
    MergePlan,
    apply_spatial,
    apply_temporal,
    importance_scores,
    oracle_best_pairs,
    plan_geometry,
    plan_importance,
    prune,
)
from tsagg.costmodel import FlopReport, flops_divided, flops_joint, sweep
from tsagg.encoder import EncodedVideo, EncoderConfig, encode, init_weights
from tsagg.tokenization import RawVideo, TokenGrid, embed, frame_tokens, patchify
from tsagg.trajectory import Trajectory, recover_groups, render_masks, similarity_probe

__version__ = "0.1.0"

__all__ = [
    "EncodedVideo",
    "EncoderConfig",
    "FlopReport",
    "MergePlan",
    "RawVideo",
    "TokenGrid",
    "Trajectory",
    "apply_spatial",
    "apply_temporal",
    "embed",
    "encode",
    "flops_divided",
    "flops_joint",
    "frame_tokens",
    "importance_scores",
    "init_weights",
    "oracle_best_pairs",
    "patchify",
    "plan_geometry",
    "plan_importance",
    "prune",
    "recover_groups",
    "render_masks",
    "similarity_probe",
    "sweep",
]
