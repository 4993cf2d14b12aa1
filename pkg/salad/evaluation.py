# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Detection metrics: greedy tIoU matching, all-point average precision and
mAP over a set of tIoU thresholds.

Conventions: detections are matched in decreasing score order (ties keep
input order) to the unmatched same-class ground truth of highest tIoU;
AP is the uninterpolated mean of the precision at every true positive
over the number of ground truths; classes without ground truth do not
enter the class mean.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from ._schema import THRESHOLD_PRESETS, ThresholdPreset
from .exceptions import EvaluationError, UnknownVideoError
from .intervals import tiou_matrix

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

    from .assignment import GroundTruthSet
    from .inference import Proposal

logger = logging.getLogger(__name__)


def resolve_thresholds(spec) -> tuple[float, ...]:
    """Turn a preset name or an explicit list into a sorted tuple of thresholds."""
    if isinstance(spec, str):
        try:
            return THRESHOLD_PRESETS[ThresholdPreset(spec)]
        except ValueError:
            valid = ", ".join(p.value for p in ThresholdPreset)
            raise EvaluationError(f"unknown threshold preset '{spec}'; allowed: {valid}") from None
    values = tuple(sorted({float(v) for v in spec}))
    if not values:
        raise EvaluationError("at least one tIoU threshold is required")
    for value in values:
        if not 0.0 < value <= 1.0:
            raise EvaluationError(f"tIoU thresholds must lie in (0, 1], got {value}")
    return values


def _score_order(scores) -> np.ndarray:
    return np.argsort(-np.asarray(scores, dtype=np.float64), kind="stable")


def match_detections(dets: Sequence[Proposal], gts: GroundTruthSet, thresh: float) -> list[bool]:
    """True-positive flag of every detection, aligned with ``dets``."""
    flags = [False] * len(dets)
    if not dets or not len(gts):
        return flags
    gs, ge = gts.bounds()
    gt_class = np.array(gts.class_ids)
    starts = np.array([d.interval.start for d in dets])
    ends = np.array([d.interval.end for d in dets])
    overlap = tiou_matrix(starts, ends, gs, ge)
    taken = np.zeros(len(gts), dtype=bool)
    for index in _score_order([d.score for d in dets]):
        eligible = (gt_class == dets[index].class_id) & ~taken
        if not eligible.any():
            continue
        candidates = np.where(eligible, overlap[index], -1.0)
        best = int(np.argmax(candidates))
        if candidates[best] >= thresh:
            taken[best] = True
            flags[index] = True
    return flags


def average_precision(flags: Sequence[bool], scores: Sequence[float], n_gt: int) -> float:
    if n_gt < 0:
        raise EvaluationError(f"number of ground truths must be non-negative, got {n_gt}")
    if len(flags) != len(scores):
        raise EvaluationError(f"{len(flags)} flags for {len(scores)} scores")
    if n_gt == 0 or not len(flags):
        return 0.0
    ranked = np.asarray(flags, dtype=bool)[_score_order(scores)]
    hits = np.cumsum(ranked)
    precision = hits / np.arange(1, len(ranked) + 1)
    return float(precision[ranked].sum() / n_gt)


@dataclass
class ClassCounts:
    tp: int = 0
    fp: int = 0
    n_gt: int = 0


@dataclass
class EvalReport:
    thresholds: tuple[float, ...]
    mean_ap: dict[float, float] = field(default_factory=dict)
    class_ap: dict[float, dict[int, float]] = field(default_factory=dict)
    counts: dict[float, dict[int, ClassCounts]] = field(default_factory=dict)
    class_names: dict[int, str] = field(default_factory=dict)

    def map_at(self, thresh: float) -> float:
        for key, value in self.mean_ap.items():
            if abs(key - thresh) < 1e-9:
                return value
        raise EvaluationError(f"threshold {thresh} was not evaluated")

    @property
    def average(self) -> float:
        return float(np.mean(list(self.mean_ap.values()))) if self.mean_ap else 0.0

    def class_label(self, class_id: int) -> str:
        return self.class_names.get(class_id, f"class_{class_id}")

    def to_records(self) -> list[dict]:
        """One flat record per (threshold, class) plus a class-mean row per threshold."""
        records = []
        for thresh in self.thresholds:
            for class_id, ap in sorted(self.class_ap[thresh].items()):
                count = self.counts[thresh][class_id]
                records.append(
                    {
                        "threshold": thresh,
                        "class_id": class_id,
                        "class_name": self.class_label(class_id),
                        "ap": ap,
                        "tp": count.tp,
                        "fp": count.fp,
                        "n_gt": count.n_gt,
                    }
                )
            records.append(
                {
                    "threshold": thresh,
                    "class_id": "",
                    "class_name": "mAP",
                    "ap": self.mean_ap[thresh],
                    "tp": "",
                    "fp": "",
                    "n_gt": "",
                }
            )
        return records


def map_at_thresholds(
    dets: Mapping[str, Sequence[Proposal]],
    gts: Mapping[str, GroundTruthSet],
    thresholds=ThresholdPreset.THUMOS,
    class_names: Mapping[int, str] | None = None,
) -> EvalReport:
    """Pool detections per class across videos and average AP over classes."""
    unknown = sorted(set(dets) - set(gts))
    if unknown:
        raise UnknownVideoError(
            "detections reference videos without ground truth: " + ", ".join(unknown)
        )
    thresholds = resolve_thresholds(thresholds)
    n_gt = defaultdict(int)
    for gt in gts.values():
        for class_id in gt.class_ids:
            n_gt[class_id] += 1
    report = EvalReport(thresholds=thresholds, class_names=dict(class_names or {}))
    for thresh in thresholds:
        pooled_flags = defaultdict(list)
        pooled_scores = defaultdict(list)
        for video_id, video_dets in dets.items():
            flags = match_detections(video_dets, gts[video_id], thresh)
            for det, flag in zip(video_dets, flags):
                pooled_flags[det.class_id].append(flag)
                pooled_scores[det.class_id].append(det.score)
        class_ap = {}
        counts = {}
        for class_id in sorted(n_gt):
            flags = pooled_flags.get(class_id, [])
            class_ap[class_id] = average_precision(flags, pooled_scores.get(class_id, []), n_gt[class_id])
            counts[class_id] = ClassCounts(tp=sum(flags), fp=len(flags) - sum(flags), n_gt=n_gt[class_id])
        report.class_ap[thresh] = class_ap
        report.counts[thresh] = counts
        report.mean_ap[thresh] = float(np.mean(list(class_ap.values()))) if class_ap else 0.0
        logger.debug("mAP@%g = %.4f over %d classes", thresh, report.mean_ap[thresh], len(class_ap))
    return report
