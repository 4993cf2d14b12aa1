# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Training status of a video: which frames regress which instance (alpha),
which instances are matched (beta) and which frames should raise their
self-assessment score (y).

``assign_salad`` is the self-assessment assignment: frames are visited in
decreasing confidence order, every frame inside a still-unmatched instance
takes part in the regression of that instance, and the first one whose
segment clears the tIoU threshold claims it. Frames inside an instance that
was already claimed are pruned. The other strategies reproduce the
ablation baselines.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from ._schema import PruningVariant, SelfAssessVariant
from .exceptions import AssignmentError, ShapeError
from .intervals import Interval, tiou_matrix

if TYPE_CHECKING:
    from collections.abc import Sequence

logger = logging.getLogger(__name__)

PROBABILITY_TOLERANCE = 1e-6


@dataclass(frozen=True)
class FramePrediction:
    """Per-frame model output: anchored segment, self-assessment and class distribution."""

    t: float
    interval: Interval
    p_hat: float
    class_dist: tuple[float, ...]

    def __post_init__(self):
        p_hat = float(self.p_hat)
        if math.isnan(p_hat):
            raise AssignmentError(f"self-assessment score at t={self.t} is NaN")
        if not 0.0 <= p_hat <= 1.0:
            raise AssignmentError(f"self-assessment score {p_hat} at t={self.t} is outside [0, 1]")
        if not self.interval.contains(self.t):
            raise AssignmentError(f"segment {self.interval} does not contain its anchor t={self.t}")
        dist = tuple(float(p) for p in self.class_dist)
        if dist:
            if min(dist) < 0 or abs(sum(dist) - 1.0) > PROBABILITY_TOLERANCE:
                raise AssignmentError(f"class distribution at t={self.t} is not a probability vector")
        object.__setattr__(self, "p_hat", p_hat)
        object.__setattr__(self, "class_dist", dist)


@dataclass(frozen=True)
class GroundTruthSet:
    """Annotated action instances of one video; class 0 is reserved for background."""

    instances: tuple[tuple[Interval, int], ...]
    video_length: float

    def __post_init__(self):
        if not self.video_length > 0:
            raise AssignmentError(f"video length must be positive, got {self.video_length}")
        instances = tuple((interval, int(class_id)) for interval, class_id in self.instances)
        for index, (interval, class_id) in enumerate(instances):
            if class_id < 1:
                raise AssignmentError(f"instance {index} has non-action class id {class_id}")
            if interval.start < 0 or interval.end > self.video_length:
                raise AssignmentError(
                    f"instance {index} {interval} exceeds the video extent [0, {self.video_length}]"
                )
        object.__setattr__(self, "instances", instances)

    def __len__(self):
        return len(self.instances)

    @property
    def intervals(self) -> list[Interval]:
        return [interval for interval, _ in self.instances]

    @property
    def class_ids(self) -> list[int]:
        return [class_id for _, class_id in self.instances]

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        starts = np.array([i.start for i in self.intervals], dtype=np.float64)
        ends = np.array([i.end for i in self.intervals], dtype=np.float64)
        return starts, ends


@dataclass
class AssignmentStatus:
    alpha: np.ndarray
    beta: np.ndarray
    y: np.ndarray
    sigma: tuple[int, ...]
    strategy: str = field(default=SelfAssessVariant.SALAD)

    @property
    def num_positive(self) -> int:
        return int(self.y.sum())

    def pruned_mask(self, containment: np.ndarray) -> np.ndarray:
        """Frames inside some instance that neither regress nor get a positive target."""
        inside = containment.any(axis=1)
        return inside & ~self.alpha.any(axis=1) & (self.y == 0)


def _prediction_arrays(preds: Sequence[FramePrediction]):
    if not preds:
        raise AssignmentError("at least one frame prediction is required")
    t = np.array([p.t for p in preds], dtype=np.float64)
    p_hat = np.array([p.p_hat for p in preds], dtype=np.float64)
    if np.isnan(p_hat).any():
        raise AssignmentError("self-assessment scores contain NaN")
    starts = np.array([p.interval.start for p in preds], dtype=np.float64)
    ends = np.array([p.interval.end for p in preds], dtype=np.float64)
    return t, p_hat, starts, ends


def confidence_order(t: np.ndarray, p_hat: np.ndarray) -> tuple[int, ...]:
    """Frame indices by decreasing confidence, ties by ascending time."""
    return tuple(int(i) for i in np.lexsort((t, -p_hat)))


def containment_matrix(t: np.ndarray, gts: GroundTruthSet) -> np.ndarray:
    """(T, N) boolean: frame anchor inside instance n."""
    gs, ge = gts.bounds()
    return (gs[None, :] <= t[:, None]) & (t[:, None] <= ge[None, :])


def _check_mu(mu: float):
    if not 0.0 < mu < 1.0:
        raise AssignmentError(f"tIoU threshold mu must lie in (0, 1), got {mu}")


def assign_salad(
    preds: Sequence[FramePrediction], gts: GroundTruthSet, mu: float
) -> AssignmentStatus:
    _check_mu(mu)
    t, p_hat, starts, ends = _prediction_arrays(preds)
    n_frames, n_inst = len(preds), len(gts)
    sigma = confidence_order(t, p_hat)
    alpha = np.zeros((n_frames, n_inst), dtype=np.int8)
    beta = np.zeros(n_inst, dtype=np.int8)
    y = np.zeros(n_frames, dtype=np.int8)
    if n_inst == 0:
        return AssignmentStatus(alpha, beta, y, sigma, SelfAssessVariant.SALAD)

    inside = containment_matrix(t, gts)
    gs, ge = gts.bounds()
    rho = tiou_matrix(starts, ends, gs, ge, clamp=False)
    for frame in sigma:
        for n in range(n_inst):
            if beta[n] or not inside[frame, n]:
                continue
            alpha[frame, n] = 1
            if rho[frame, n] > mu:
                beta[n] = 1
                y[frame] = 1
    return AssignmentStatus(alpha, beta, y, sigma, SelfAssessVariant.SALAD)


def assign_variant(
    strategy: SelfAssessVariant | str,
    preds: Sequence[FramePrediction],
    gts: GroundTruthSet,
    mu: float,
) -> AssignmentStatus:
    """Self-assessment targets of the ablation baselines.

    The baselines never prune: every frame inside instance n regresses it.
    """
    try:
        strategy = SelfAssessVariant(strategy)
    except ValueError:
        valid = ", ".join(v.value for v in SelfAssessVariant)
        raise AssignmentError(f"unknown self-assessment strategy '{strategy}'; allowed: {valid}")
    if strategy == SelfAssessVariant.SALAD:
        return assign_salad(preds, gts, mu)

    _check_mu(mu)
    t, p_hat, starts, ends = _prediction_arrays(preds)
    n_frames, n_inst = len(preds), len(gts)
    sigma = confidence_order(t, p_hat)
    y = np.zeros(n_frames, dtype=np.int8)
    beta = np.zeros(n_inst, dtype=np.int8)
    if n_inst == 0:
        return AssignmentStatus(np.zeros((n_frames, 0), dtype=np.int8), beta, y, sigma, strategy)

    inside = containment_matrix(t, gts)
    alpha = inside.astype(np.int8)
    if strategy == SelfAssessVariant.TOP_CONFIDENCE:
        rank = np.empty(n_frames, dtype=np.int64)
        rank[list(sigma)] = np.arange(n_frames)
        for n in range(n_inst):
            members = np.flatnonzero(inside[:, n])
            if members.size:
                best = members[np.argmin(rank[members])]
                y[best] = 1
                beta[n] = 1
    elif strategy == SelfAssessVariant.CONFIDENCE_THRESHOLD:
        positive = inside.any(axis=1) & (p_hat > 0.5)
        y[positive] = 1
        beta[:] = (inside & positive[:, None]).any(axis=0)
    elif strategy == SelfAssessVariant.IOU_THRESHOLD:
        gs, ge = gts.bounds()
        good = inside & (tiou_matrix(starts, ends, gs, ge, clamp=False) > mu)
        y[good.any(axis=1)] = 1
        beta[:] = good.any(axis=0)
    return AssignmentStatus(alpha, beta, y, sigma, strategy)


def apply_pruning_variant(
    strategy: PruningVariant | str,
    status: AssignmentStatus,
    preds: Sequence[FramePrediction],
    gts: GroundTruthSet,
    rng_seed: int | None = None,
    frozen_alpha: np.ndarray | None = None,
) -> AssignmentStatus:
    """Replace the regression gate alpha according to a pruning baseline.

    y, beta and sigma are kept from ``status``.
    """
    try:
        strategy = PruningVariant(strategy)
    except ValueError:
        valid = ", ".join(v.value for v in PruningVariant)
        raise AssignmentError(f"unknown pruning strategy '{strategy}'; allowed: {valid}")
    if strategy == PruningVariant.SALAD:
        return status

    t, _, starts, ends = _prediction_arrays(preds)
    shape = (len(preds), len(gts))
    if strategy == PruningVariant.FROZEN:
        if frozen_alpha is None:
            raise AssignmentError("the frozen pruning strategy needs a captured alpha matrix")
        frozen_alpha = np.asarray(frozen_alpha)
        if frozen_alpha.shape != shape:
            raise ShapeError(f"frozen alpha has shape {frozen_alpha.shape}, expected {shape}")
        alpha = (frozen_alpha != 0).astype(np.int8)
    else:
        inside = containment_matrix(t, gts) if len(gts) else np.zeros(shape, dtype=bool)
        if strategy == PruningVariant.NO_PRUNING:
            alpha = inside.astype(np.int8)
        elif strategy == PruningVariant.RANDOM:
            coins = np.random.default_rng(rng_seed).integers(0, 2, size=shape)
            alpha = (inside & (coins == 1)).astype(np.int8)
        else:  # TOP1_IOU
            alpha = np.zeros(shape, dtype=np.int8)
            if len(gts):
                gs, ge = gts.bounds()
                rho = np.where(inside, tiou_matrix(starts, ends, gs, ge, clamp=False), -np.inf)
                for n in range(shape[1]):
                    if inside[:, n].any():
                        alpha[int(np.argmax(rho[:, n])), n] = 1
    return AssignmentStatus(alpha, status.beta.copy(), status.y.copy(), status.sigma, status.strategy)


def compute_status(
    preds: Sequence[FramePrediction],
    gts: GroundTruthSet,
    mu: float,
    assignment: SelfAssessVariant | str = SelfAssessVariant.SALAD,
    pruning: PruningVariant | str = PruningVariant.SALAD,
    rng_seed: int | None = None,
    frozen_alpha: np.ndarray | None = None,
) -> AssignmentStatus:
    """Self-assessment strategy first, then the pruning strategy on top of it."""
    status = assign_variant(assignment, preds, gts, mu)
    return apply_pruning_variant(pruning, status, preds, gts, rng_seed, frozen_alpha)
