"""1-D interval arithmetic on normalized video time.

All geometry lives in [0, 1]; conversion to seconds happens only at the data
boundary. Two families of helpers are provided: plain float/numpy functions
used by matching and evaluation, and torch variants that stay inside the
autograd graph for the differentiable losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


@dataclass(frozen=True)
class Segment:
    """One temporal event boundary (start, end) in normalized time.

    Use :func:`make_segment` to canonicalize raw model outputs; a Segment is
    assumed to satisfy 0 <= start <= end <= 1. Zero-length segments are valid
    and have measure 0.
    """

    start: float
    end: float

    @property
    def length(self) -> float:
        return self.end - self.start


def make_segment(start: float, end: float) -> Segment:
    """Canonicalize an interval: swap if reversed, then clamp into [0, 1]."""
    if start > end:
        start, end = end, start
    return Segment(min(max(start, 0.0), 1.0), min(max(end, 0.0), 1.0))


def tiou(a: Segment, b: Segment) -> float:
    """Temporal IoU |a∩b| / |a∪b|; defined as 0 when the union has measure 0."""
    inter = min(a.end, b.end) - max(a.start, b.start)
    inter = max(inter, 0.0)
    union = a.length + b.length - inter
    if union <= 0.0:
        return 0.0
    return inter / union


def giou1d(a: Segment, b: Segment) -> float:
    """1-D generalized IoU: tiou minus the hull fraction not covered by a∪b.

    Lies in [-1, 1]; equals tiou whenever a∪b is contiguous, and approaches
    -1 for far-apart point-like segments. Zero-measure hull gives 0.
    """
    inter = max(min(a.end, b.end) - max(a.start, b.start), 0.0)
    union = a.length + b.length - inter
    hull = max(a.end, b.end) - min(a.start, b.start)
    if hull <= 0.0:
        return 0.0
    iou = inter / union if union > 0.0 else 0.0
    return iou - (hull - union) / hull


def as_array(segments) -> np.ndarray:
    """Stack Segments (or (start, end) pairs) into an (n, 2) float array."""
    out = np.empty((len(segments), 2), dtype=np.float64)
    for i, seg in enumerate(segments):
        if isinstance(seg, Segment):
            out[i, 0], out[i, 1] = seg.start, seg.end
        else:
            out[i, 0], out[i, 1] = float(seg[0]), float(seg[1])
    return out


def pairwise_tiou(xs, ys) -> np.ndarray:
    """|xs| x |ys| matrix with entry (i, j) = tiou(xs[i], ys[j])."""
    a = as_array(xs)
    b = as_array(ys)
    if a.size == 0 or b.size == 0:
        return np.zeros((len(a), len(b)))
    inter = np.clip(
        np.minimum(a[:, None, 1], b[None, :, 1]) - np.maximum(a[:, None, 0], b[None, :, 0]),
        0.0,
        None,
    )
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0.0, inter / np.maximum(union, 1e-300), 0.0)
    return out


def pairwise_giou(xs, ys) -> np.ndarray:
    """|xs| x |ys| matrix of 1-D generalized IoU values."""
    a = as_array(xs)
    b = as_array(ys)
    if a.size == 0 or b.size == 0:
        return np.zeros((len(a), len(b)))
    inter = np.clip(
        np.minimum(a[:, None, 1], b[None, :, 1]) - np.maximum(a[:, None, 0], b[None, :, 0]),
        0.0,
        None,
    )
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    hull = np.maximum(a[:, None, 1], b[None, :, 1]) - np.minimum(a[:, None, 0], b[None, :, 0])
    iou = np.where(union > 0.0, inter / np.maximum(union, 1e-300), 0.0)
    out = np.where(hull > 0.0, iou - (hull - union) / np.maximum(hull, 1e-300), 0.0)
    return out


# ---------------------------------------------------------------------------
# torch variants (differentiable; same degenerate rules, grad-safe divisions)

def pairwise_tiou_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Torch pairwise tIoU between (n, 2) and (m, 2) segment tensors."""
    inter = (torch.minimum(a[:, None, 1], b[None, :, 1])
             - torch.maximum(a[:, None, 0], b[None, :, 0])).clamp_min(0.0)
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    ratio = inter / union.clamp_min(1e-12)
    return torch.where(union > 0, ratio, torch.zeros_like(ratio))


def pairwise_giou_t(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Torch pairwise 1-D generalized IoU between (n, 2) and (m, 2) tensors."""
    inter = (torch.minimum(a[:, None, 1], b[None, :, 1])
             - torch.maximum(a[:, None, 0], b[None, :, 0])).clamp_min(0.0)
    union = (a[:, 1] - a[:, 0])[:, None] + (b[:, 1] - b[:, 0])[None, :] - inter
    hull = (torch.maximum(a[:, None, 1], b[None, :, 1])
            - torch.minimum(a[:, None, 0], b[None, :, 0]))
    iou = torch.where(union > 0, inter / union.clamp_min(1e-12), torch.zeros_like(inter))
    out = iou - (hull - union) / hull.clamp_min(1e-12)
    return torch.where(hull > 0, out, torch.zeros_like(out))
