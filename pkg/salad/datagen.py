# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Datasets of per-frame feature sequences and the seeded synthetic generator.

Synthetic videos are isotropic Gaussian noise; inside an action instance of
class c the frames additionally carry ``snr`` times the c-th class direction,
faded in and out over the first and last 10% of the instance. The class
directions are orthonormal, taken from the QR factorization of a seeded
random matrix.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .assignment import GroundTruthSet
from .exceptions import ConfigError, DatasetFormatError
from .intervals import Interval

if TYPE_CHECKING:
    from collections.abc import Iterator, Sequence

    from ._schema import SynthConfig

logger = logging.getLogger(__name__)

ENVELOPE_FRACTION = 0.1
MIN_GAP_FRAMES = 1
FEATURE_DTYPE = np.float32


@dataclass(frozen=True)
class VideoSample:
    video_id: str
    features: np.ndarray
    ground_truth: GroundTruthSet
    frame_rate: float

    def __post_init__(self):
        features = np.asarray(self.features, dtype=FEATURE_DTYPE)
        if features.ndim != 2 or features.shape[0] < 1:
            raise DatasetFormatError(
                f"video '{self.video_id}': features must be a non-empty (T, D) matrix, "
                f"got shape {features.shape}"
            )
        if not np.all(np.isfinite(features)):
            raise DatasetFormatError(f"video '{self.video_id}': features contain non-finite values")
        if not self.frame_rate > 0:
            raise DatasetFormatError(f"video '{self.video_id}': frame rate must be positive")
        features.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "frame_rate", float(self.frame_rate))

    @property
    def num_frames(self) -> int:
        return self.features.shape[0]

    @property
    def duration(self) -> float:
        return self.num_frames / self.frame_rate

    def __eq__(self, other):
        if not isinstance(other, VideoSample):
            return NotImplemented
        return (
            self.video_id == other.video_id
            and self.frame_rate == other.frame_rate
            and self.ground_truth == other.ground_truth
            and self.features.shape == other.features.shape
            and bool(np.array_equal(self.features, other.features))
        )

    __hash__ = None


@dataclass(frozen=True)
class Dataset:
    feature_dim: int
    num_classes: int
    class_names: tuple[str, ...]
    videos: tuple[VideoSample, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "class_names", tuple(self.class_names))
        object.__setattr__(self, "videos", tuple(self.videos))
        if len(self.class_names) != self.num_classes:
            raise DatasetFormatError(
                f"{len(self.class_names)} class names for {self.num_classes} classes"
            )
        seen = set()
        for video in self.videos:
            if video.video_id in seen:
                raise DatasetFormatError(f"duplicate video id '{video.video_id}'")
            seen.add(video.video_id)
            if video.features.shape[1] != self.feature_dim:
                raise DatasetFormatError(
                    f"video '{video.video_id}' has feature dimension {video.features.shape[1]}, "
                    f"expected {self.feature_dim}"
                )
            for index, class_id in enumerate(video.ground_truth.class_ids):
                if class_id > self.num_classes:
                    raise DatasetFormatError(
                        f"video '{video.video_id}' instance {index}: class id {class_id} "
                        f"exceeds the {self.num_classes} declared classes"
                    )

    def __len__(self):
        return len(self.videos)

    def __iter__(self) -> Iterator[VideoSample]:
        return iter(self.videos)

    def __getitem__(self, index) -> VideoSample:
        return self.videos[index]

    @property
    def class_map(self) -> dict[int, str]:
        return {index + 1: name for index, name in enumerate(self.class_names)}

    @property
    def num_instances(self) -> int:
        return sum(len(v.ground_truth) for v in self.videos)

    def class_histogram(self) -> dict[str, int]:
        counts = Counter(c for v in self.videos for c in v.ground_truth.class_ids)
        return {name: counts.get(index + 1, 0) for index, name in enumerate(self.class_names)}

    def subset(self, videos: Sequence[VideoSample]) -> Dataset:
        return Dataset(self.feature_dim, self.num_classes, self.class_names, tuple(videos))

    def split(self, val_fraction: float = 0.2) -> tuple[Dataset, Dataset]:
        """Leading videos train, the trailing ``val_fraction`` validate."""
        n_val = int(round(len(self.videos) * val_fraction))
        n_train = len(self.videos) - n_val
        return self.subset(self.videos[:n_train]), self.subset(self.videos[n_train:])


def class_directions(rng: np.random.Generator, feature_dim: int, num_classes: int) -> np.ndarray:
    """(num_classes, feature_dim) orthonormal rows."""
    q, _ = np.linalg.qr(rng.standard_normal((feature_dim, feature_dim)))
    return q[:, :num_classes].T


def envelope(length: int, fraction: float = ENVELOPE_FRACTION) -> np.ndarray:
    """Trapezoid ramping up over the first and down over the last ``fraction`` of ``length`` frames."""
    ramp = max(1, int(math.ceil(fraction * length)))
    j = np.arange(length, dtype=np.float64)
    return np.minimum(1.0, np.minimum((j + 1) / ramp, (length - j) / ramp))


def _place_instances(rng, index, num_frames, durations):
    total = int(durations.sum()) + MIN_GAP_FRAMES * max(len(durations) - 1, 0)
    if total > num_frames:
        raise ConfigError(
            f"video {index}: cannot place {len(durations)} disjoint instances of "
            f"{durations.tolist()} frames in {num_frames} frames"
        )
    slack = num_frames - total
    cuts = np.sort(rng.integers(0, slack + 1, size=len(durations)))
    starts = []
    cursor = 0
    previous_cut = 0
    for k, (cut, duration) in enumerate(zip(cuts, durations)):
        cursor += int(cut - previous_cut) + (MIN_GAP_FRAMES if k else 0)
        starts.append(cursor)
        cursor += int(duration)
        previous_cut = cut
    return starts


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """A dataset that is a pure function of ``cfg`` (seed included)."""
    rng = np.random.default_rng(cfg.seed)
    directions = class_directions(rng, cfg.feature_dim, cfg.num_classes)
    class_names = cfg.class_names or [f"class_{c + 1}" for c in range(cfg.num_classes)]
    videos = []
    for index in range(cfg.num_videos):
        num_frames = int(rng.integers(cfg.frames_min, cfg.frames_max + 1))
        count = int(rng.integers(cfg.instances_min, cfg.instances_max + 1))
        durations = rng.integers(cfg.duration_min, cfg.duration_max + 1, size=count)
        classes = rng.integers(1, cfg.num_classes + 1, size=count)
        starts = _place_instances(rng, index, num_frames, durations)
        features = rng.standard_normal((num_frames, cfg.feature_dim))
        instances = []
        for start, duration, class_id in zip(starts, durations, classes):
            duration = int(duration)
            fade = envelope(duration)[:, None]
            features[start : start + duration] += cfg.snr * fade * directions[class_id - 1]
            interval = Interval(start / cfg.frame_rate, (start + duration) / cfg.frame_rate)
            instances.append((interval, int(class_id)))
        videos.append(
            VideoSample(
                video_id=f"video_{index:05d}",
                features=features.astype(FEATURE_DTYPE),
                ground_truth=GroundTruthSet(tuple(instances), num_frames / cfg.frame_rate),
                frame_rate=cfg.frame_rate,
            )
        )
    dataset = Dataset(cfg.feature_dim, cfg.num_classes, tuple(class_names), tuple(videos))
    logger.info(
        "generated %d videos with %d instances (seed %d)",
        len(dataset),
        dataset.num_instances,
        cfg.seed,
    )
    return dataset
