# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Temporal intervals, tIoU and anchored offset decoding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .autodiff import Tensor, concat, maximum, minimum
from .exceptions import IntervalError

if TYPE_CHECKING:
    from collections.abc import Sequence

TIOU_TOLERANCE = 1e-9


@dataclass(frozen=True, order=True)
class Interval:
    """A closed temporal segment ``[start, end]`` in seconds (or frame units)."""

    start: float
    end: float

    def __post_init__(self):
        start, end = float(self.start), float(self.end)
        if not (math.isfinite(start) and math.isfinite(end)):
            raise IntervalError(f"interval bounds must be finite, got [{start}, {end}]")
        if start > end:
            raise IntervalError(f"interval start {start} is after its end {end}")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "end", end)

    @property
    def length(self) -> float:
        return self.end - self.start

    def contains(self, t: float) -> bool:
        return self.start <= t <= self.end

    def clip(self, low: float, high: float) -> Interval:
        start = min(max(self.start, low), high)
        end = min(max(self.end, low), high)
        return Interval(start, end)


@dataclass(frozen=True)
class OffsetPair:
    """Normalized distances from the anchor to the start and to the end."""

    eps_start: float
    eps_end: float

    def __post_init__(self):
        for label in ("eps_start", "eps_end"):
            value = float(getattr(self, label))
            if not 0.0 <= value <= 1.0:
                raise IntervalError(f"{label} must lie in [0, 1], got {value}")
            object.__setattr__(self, label, value)


def tiou_raw(a: Interval, b: Interval) -> float:
    """Signed temporal IoU.

    Negative for disjoint intervals (the gap over the hull). Two identical
    single-point intervals have an empty hull and count as identical.
    """
    inter = min(a.end, b.end) - max(a.start, b.start)
    union = max(a.end, b.end) - min(a.start, b.start)
    if union <= 0.0:
        if a == b:
            return 1.0
        raise IntervalError(f"tIoU undefined for {a} and {b}: empty union")
    return inter / union


def tiou(a: Interval, b: Interval) -> float:
    return max(0.0, tiou_raw(a, b))


def segment_from_offsets(t: float, off: OffsetPair, scale: float) -> Interval:
    if not scale > 0:
        raise IntervalError(f"offset scale must be positive, got {scale}")
    return Interval(t - off.eps_start * scale, t + off.eps_end * scale)


def tiou_matrix(starts, ends, gt_starts, gt_ends, clamp=True) -> np.ndarray:
    """All-pairs tIoU between P predicted and G reference segments, shape (P, G)."""
    starts = np.asarray(starts, dtype=np.float64)[:, None]
    ends = np.asarray(ends, dtype=np.float64)[:, None]
    gt_starts = np.asarray(gt_starts, dtype=np.float64)[None, :]
    gt_ends = np.asarray(gt_ends, dtype=np.float64)[None, :]
    inter = np.minimum(ends, gt_ends) - np.maximum(starts, gt_starts)
    union = np.maximum(ends, gt_ends) - np.minimum(starts, gt_starts)
    identical = (starts == gt_starts) & (ends == gt_ends)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.where(union > 0, inter / np.where(union > 0, union, 1.0), 1.0)
    out = np.where(identical, 1.0, out)
    if clamp:
        out = np.maximum(out, 0.0)
    return out


def segments_from_offsets(offsets: Tensor, anchors: np.ndarray, scale: float) -> Tensor:
    """Differentiable batch decoding: (T, 2) offsets -> (T, 2) ``[start, end]`` rows."""
    if not scale > 0:
        raise IntervalError(f"offset scale must be positive, got {scale}")
    anchors = np.asarray(anchors, dtype=offsets.dtype).reshape(-1, 1)
    starts = anchors - offsets[:, 0:1] * scale
    ends = anchors + offsets[:, 1:2] * scale
    return concat([starts, ends], axis=1)


def tiou_raw_tensor(segments: Tensor, gt_starts: Sequence[float], gt_ends: Sequence[float]) -> Tensor:
    """Differentiable signed tIoU of every predicted segment against every reference.

    ``segments`` is (T, 2); the result is (T, N). The references must be
    non-degenerate so the union never vanishes.
    """
    gs = np.asarray(gt_starts, dtype=segments.dtype).reshape(1, -1)
    ge = np.asarray(gt_ends, dtype=segments.dtype).reshape(1, -1)
    if np.any(ge <= gs):
        raise IntervalError("reference segments must have positive length")
    starts = segments[:, 0:1]
    ends = segments[:, 1:2]
    inter = minimum(ends, ge) - maximum(starts, gs)
    union = maximum(ends, ge) - minimum(starts, gs)
    return inter / union
