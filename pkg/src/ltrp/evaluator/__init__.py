"""Patch-level consistency metrics, the downstream probe, FLOPs accounting,
and the attention-distance diagnostic."""

from .annotations import (
    Box,
    Category,
    ImageAnnotation,
    load_annotations,
    load_categories,
    rle_decode,
    rle_encode,
)
from .attention import attention_distance, mean_attention_distance
from .flops import FlopsEstimate, VitSpec, flops_estimate, scoring_flops
from .metrics import PatchMetrics, foreground_mask, patch_metrics, selection_mask
from .probe import PatchProbe, ProbeConfig, ProbeItem, select_items, train_probe

__all__ = [
    "Box",
    "Category",
    "ImageAnnotation",
    "load_annotations",
    "load_categories",
    "rle_decode",
    "rle_encode",
    "attention_distance",
    "mean_attention_distance",
    "FlopsEstimate",
    "VitSpec",
    "flops_estimate",
    "scoring_flops",
    "PatchMetrics",
    "foreground_mask",
    "patch_metrics",
    "selection_mask",
    "PatchProbe",
    "ProbeConfig",
    "ProbeItem",
    "select_items",
    "train_probe",
]
