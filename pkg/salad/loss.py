# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Training objective: self-assessment plus regression, classification, and
their weighted total. Every loss returns a differentiable scalar tensor;
assignment targets (alpha, y) and frame labels are constants.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .autodiff import Tensor, as_tensor, clip, log, tsum
from .exceptions import ShapeError
from .intervals import tiou_raw_tensor

if TYPE_CHECKING:
    from ._schema import LossWeights
    from .assignment import AssignmentStatus, GroundTruthSet

logger = logging.getLogger(__name__)

PROB_EPS = 1e-7


@dataclass(frozen=True)
class FrameLabels:
    """Per-frame class id (0 is background) and the classification gate w."""

    class_id: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        class_id = np.asarray(self.class_id, dtype=np.int64)
        w = np.asarray(self.w, dtype=np.int8)
        if class_id.shape != w.shape:
            raise ShapeError(f"labels of shape {class_id.shape} and gate of shape {w.shape} differ")
        if np.any((w == 0) != (class_id == 0)):
            raise ShapeError("the classification gate must be zero exactly on background frames")
        object.__setattr__(self, "class_id", class_id)
        object.__setattr__(self, "w", w)

    @classmethod
    def from_classes(cls, class_id) -> FrameLabels:
        class_id = np.asarray(class_id, dtype=np.int64)
        return cls(class_id, (class_id != 0).astype(np.int8))

    def __len__(self):
        return len(self.class_id)


def frame_labels(gts: GroundTruthSet, anchors: np.ndarray) -> FrameLabels:
    """Label every anchor with the class of the instance containing it.

    When instances overlap, the one that starts first wins (then the lower index).
    """
    anchors = np.asarray(anchors, dtype=np.float64)
    class_id = np.zeros(len(anchors), dtype=np.int64)
    ranked = sorted(range(len(gts)), key=lambda n: (gts.intervals[n].start, n))
    for n in reversed(ranked):
        interval = gts.intervals[n]
        inside = (interval.start <= anchors) & (anchors <= interval.end)
        class_id[inside] = gts.class_ids[n]
    return FrameLabels.from_classes(class_id)


def binary_cross_entropy(p: Tensor, y) -> Tensor:
    """Elementwise -[y log p + (1 - y) log(1 - p)] with p kept inside [eps, 1 - eps]."""
    p = clip(as_tensor(p), PROB_EPS, 1.0 - PROB_EPS)
    y = np.asarray(y, dtype=p.dtype)
    return -(log(p) * y + log(1.0 - p) * (1.0 - y))


def _reduce(total: Tensor, num_frames: int, reduction: str) -> Tensor:
    if reduction == "mean":
        return total * (1.0 / max(num_frames, 1))
    if reduction != "sum":
        raise ValueError(f"unknown reduction '{reduction}'")
    return total


def loss_rsa(
    p_hat: Tensor,
    segments: Tensor,
    gts: GroundTruthSet,
    status: AssignmentStatus,
    lambda1: float,
    reduction: str = "sum",
) -> Tensor:
    """Self-assessment BCE minus lambda1 times the alpha-gated signed tIoU.

    ``segments`` is the (T, 2) tensor of regressed ``[start, end]`` rows.
    """
    p_hat = as_tensor(p_hat)
    n_frames = p_hat.shape[0]
    if status.y.shape != (n_frames,) or status.alpha.shape != (n_frames, len(gts)):
        raise ShapeError(
            f"status of shapes alpha={status.alpha.shape}, y={status.y.shape} "
            f"does not fit {n_frames} frames and {len(gts)} instances"
        )
    total = tsum(binary_cross_entropy(p_hat, status.y))
    active = np.flatnonzero(status.alpha.any(axis=1))
    if active.size and lambda1:
        gs, ge = gts.bounds()
        rows = segments[active] if active.size < n_frames else segments
        alpha = status.alpha[active].astype(p_hat.dtype)
        overlap = tiou_raw_tensor(rows, gs, ge)
        total = total - tsum(overlap * alpha) * lambda1
    return _reduce(total, n_frames, reduction)


def loss_cls(
    class_probs: Tensor,
    labels: FrameLabels,
    mode: str = "binary",
    reduction: str = "sum",
) -> Tensor:
    """Classification loss over action frames only (w gates background out).

    ``binary`` sums per-class BCE against the one-hot label, background
    column included; ``categorical`` is -log of the true class probability.
    """
    class_probs = as_tensor(class_probs)
    n_frames, width = class_probs.shape
    if len(labels) != n_frames:
        raise ShapeError(f"{len(labels)} frame labels for {n_frames} frames")
    if labels.class_id.max(initial=0) >= width:
        raise ShapeError(f"class id {labels.class_id.max()} outside a {width}-way distribution")
    gate = labels.w.astype(class_probs.dtype)
    onehot = np.zeros((n_frames, width), dtype=class_probs.dtype)
    onehot[np.arange(n_frames), labels.class_id] = 1.0
    if mode == "binary":
        per_frame = tsum(binary_cross_entropy(class_probs, onehot), axis=1)
    elif mode == "categorical":
        p = clip(class_probs, PROB_EPS, 1.0)
        per_frame = -tsum(log(p) * onehot, axis=1)
    else:
        raise ValueError(f"unknown classification loss '{mode}'")
    return _reduce(tsum(per_frame * gate), n_frames, reduction)


def loss_total(
    p_hat: Tensor,
    segments: Tensor,
    class_probs: Tensor,
    gts: GroundTruthSet,
    status: AssignmentStatus,
    labels: FrameLabels,
    weights: LossWeights,
) -> Tensor:
    rsa = loss_rsa(p_hat, segments, gts, status, weights.lambda1, weights.reduction)
    if not weights.lambda2:
        return rsa
    cls = loss_cls(class_probs, labels, weights.classification, weights.reduction)
    return rsa + cls * weights.lambda2


def loss_naive(z, z_hat: Tensor, p_hat: Tensor, kappa: float, weight: float) -> Tensor:
    """Two-head baseline: squared regression error plus BCE on a thresholded target.

    The confidence target of a frame is 1 when its squared error is below
    ``kappa``. ``z`` and ``z_hat`` are (T,) or (T, K); ``p_hat`` is (T,).
    """
    z_hat = as_tensor(z_hat)
    z = np.asarray(z, dtype=z_hat.dtype)
    if z.shape != z_hat.shape:
        raise ShapeError(f"regression target shape {z.shape} != prediction shape {z_hat.shape}")
    diff = z_hat - z
    sq = diff * diff
    if sq.ndim == 2:
        sq = tsum(sq, axis=1)
    target = (sq.data < kappa).astype(z_hat.dtype)
    return tsum(sq) + tsum(binary_cross_entropy(p_hat, target)) * weight
