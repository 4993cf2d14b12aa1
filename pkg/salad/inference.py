# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
From per-frame outputs to ranked detections: one proposal per frame, score
fusion, Gaussian soft-NMS and an optional per-video cap.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from ._schema import FusionStrategy, InferenceConfig
from .exceptions import IntervalError
from .intervals import Interval, tiou_matrix
from .model import anchor_times, forward, to_frame_predictions

if TYPE_CHECKING:
    from collections.abc import Sequence

    from .assignment import FramePrediction
    from .model import ModelParams

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Proposal:
    interval: Interval
    score: float
    class_id: int
    source_frame: int = -1

    def __post_init__(self):
        score = float(self.score)
        if not math.isfinite(score) or score < 0:
            raise IntervalError(f"proposal score must be finite and non-negative, got {score}")
        if int(self.class_id) < 1:
            raise IntervalError(f"proposal class id must be an action class, got {self.class_id}")
        object.__setattr__(self, "score", score)
        object.__setattr__(self, "class_id", int(self.class_id))


def fuse_confidence(p_r: float, p_c: float, strategy: FusionStrategy | str, zeta: float = 4.0) -> float:
    for label, value in (("p_r", p_r), ("p_c", p_c)):
        if not 0.0 <= value <= 1.0:
            raise IntervalError(f"{label} must lie in [0, 1], got {value}")
    strategy = FusionStrategy(strategy)
    if strategy == FusionStrategy.REGRESSION_ONLY:
        return float(p_r)
    if strategy == FusionStrategy.ARITHMETIC_MEAN:
        return (p_r + p_c) / 2.0
    if strategy == FusionStrategy.GEOMETRIC_MEAN:
        return math.sqrt(p_r * p_c)
    return p_r * (1.0 - math.exp(-zeta * p_c))


def extract_proposals(
    preds: Sequence[FramePrediction],
    video_length: float,
    fusion: FusionStrategy | str = FusionStrategy.REGRESSION_ONLY,
    zeta: float = 4.0,
) -> list[Proposal]:
    """One proposal per frame, labeled with the most likely action class."""
    proposals = []
    for index, pred in enumerate(preds):
        actions = pred.class_dist[1:]
        if not actions:
            raise IntervalError("class distributions need at least one action class")
        best = int(np.argmax(actions))
        p_c = min(max(actions[best], 0.0), 1.0)
        proposals.append(
            Proposal(
                interval=pred.interval.clip(0.0, video_length),
                score=fuse_confidence(pred.p_hat, p_c, fusion, zeta),
                class_id=best + 1,
                source_frame=index,
            )
        )
    return proposals


def _ranked(proposals: Sequence[Proposal]) -> list[Proposal]:
    return sorted(proposals, key=lambda p: (-p.score, p.interval.start))


def soft_nms(
    proposals: Sequence[Proposal],
    sigma_nms: float = 0.5,
    min_score: float = 1e-3,
    per_class: bool = True,
) -> list[Proposal]:
    """Gaussian soft-NMS.

    The best remaining proposal is kept as is; every other remaining
    candidate (of the same class when ``per_class``) has its score multiplied
    by exp(-tIoU^2 / sigma_nms) and is dropped once it decays below
    ``min_score``. Proposals that start below ``min_score`` are never kept.
    """
    if not sigma_nms > 0:
        raise IntervalError(f"sigma_nms must be positive, got {sigma_nms}")
    remaining = _ranked(proposals)
    if not remaining:
        return []
    starts = np.array([p.interval.start for p in remaining])
    ends = np.array([p.interval.end for p in remaining])
    classes = np.array([p.class_id for p in remaining])
    scores = np.array([p.score for p in remaining])
    alive = scores >= min_score
    kept = []
    while alive.any():
        candidates = np.flatnonzero(alive)
        best = candidates[np.argmax(scores[candidates])]
        alive[best] = False
        kept.append(replace(remaining[best], score=float(scores[best])))
        others = np.flatnonzero(alive)
        if per_class:
            others = others[classes[others] == classes[best]]
        if not others.size:
            continue
        overlap = tiou_matrix(starts[others], ends[others], starts[best : best + 1], ends[best : best + 1])[:, 0]
        scores[others] *= np.exp(-(overlap**2) / sigma_nms)
        alive[others[scores[others] < min_score]] = False
    return _ranked(kept)


def top_k(proposals: Sequence[Proposal], k: int) -> list[Proposal]:
    if k < 0:
        raise IntervalError(f"k must be non-negative, got {k}")
    return _ranked(proposals)[:k]


def detect(
    features,
    params: ModelParams,
    frame_rate: float,
    config: InferenceConfig | None = None,
) -> list[Proposal]:
    """Forward pass, proposal extraction, soft-NMS and the optional cap for one video."""
    config = config or InferenceConfig()
    output = forward(features, params)
    n_frames = output.num_frames
    duration = n_frames / frame_rate
    preds = to_frame_predictions(output, anchor_times(n_frames, frame_rate), duration)
    proposals = extract_proposals(preds, duration, config.fusion, config.zeta)
    proposals = soft_nms(proposals, config.sigma_nms, config.min_score, config.per_class)
    if config.top_k is not None:
        proposals = top_k(proposals, config.top_k)
    return proposals
