import numpy as np
import pytest

from salad._schema import SynthConfig
from salad.assignment import GroundTruthSet
from salad.datagen import Dataset, VideoSample, class_directions, envelope, generate_synthetic
from salad.exceptions import ConfigError, DatasetFormatError
from salad.intervals import Interval
from salad.loss import frame_labels
from salad.model import anchor_times


def test_same_seed_same_dataset(tiny_synth):
    first = generate_synthetic(tiny_synth)
    second = generate_synthetic(tiny_synth)
    assert first == second
    other = generate_synthetic(tiny_synth.model_copy(update={"seed": 8}))
    assert other != first


def test_shapes_and_annotations(tiny_synth, tiny_dataset):
    assert len(tiny_dataset) == tiny_synth.num_videos
    assert tiny_dataset.class_names == ("class_1", "class_2")
    for video in tiny_dataset:
        assert tiny_synth.frames_min <= video.num_frames <= tiny_synth.frames_max
        assert video.features.shape[1] == tiny_synth.feature_dim
        assert video.features.dtype == np.float32
        assert tiny_synth.instances_min <= len(video.ground_truth) <= tiny_synth.instances_max
        intervals = sorted(video.ground_truth.intervals)
        for interval in intervals:
            assert tiny_synth.duration_min <= interval.length <= tiny_synth.duration_max
        # instances never touch each other
        for a, b in zip(intervals, intervals[1:]):
            assert a.end < b.start


def test_no_instances():
    cfg = SynthConfig(num_videos=3, frames_min=8, frames_max=8, instances_min=0, instances_max=0)
    dataset = generate_synthetic(cfg)
    assert dataset.num_instances == 0
    assert all(len(v.ground_truth) == 0 for v in dataset)


def test_infeasible_packing_names_the_video():
    cfg = SynthConfig(
        num_videos=2, frames_min=10, frames_max=10, instances_min=3, instances_max=3, duration_min=5, duration_max=5
    )
    with pytest.raises(ConfigError, match="video 0"):
        generate_synthetic(cfg)


def test_strong_signal_is_linearly_separable():
    cfg = SynthConfig(num_videos=20, snr=100.0, duration_min=8, duration_max=10, seed=5)
    dataset = generate_synthetic(cfg)
    features, labels = [], []
    for video in dataset:
        features.append(video.features)
        labels.append(frame_labels(video.ground_truth, anchor_times(video.num_frames, video.frame_rate)).class_id)
    features = np.concatenate(features).astype(np.float64)
    labels = np.concatenate(labels)
    means = np.stack([features[labels == c].mean(axis=0) for c in range(cfg.num_classes + 1)])
    distances = ((features[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    accuracy = np.mean(distances.argmin(axis=1) == labels)
    assert accuracy >= 0.99


def test_class_directions_are_orthonormal(rng):
    directions = class_directions(rng, 16, 5)
    np.testing.assert_allclose(directions @ directions.T, np.eye(5), atol=1e-12)


@pytest.mark.parametrize(
    "length, expected",
    (
        pytest.param(5, [1, 1, 1, 1, 1], id="short"),
        pytest.param(20, [0.5, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 0.5], id="ramped"),
    ),
)
def test_envelope(length, expected):
    np.testing.assert_allclose(envelope(length), expected)


def test_split_is_trailing(tiny_dataset):
    train, val = tiny_dataset.split(0.34)
    assert len(train) == 4 and len(val) == 2
    assert [v.video_id for v in val] == [v.video_id for v in tiny_dataset.videos[4:]]
    assert tiny_dataset.split(0.0)[1].videos == ()


def test_class_histogram(tiny_dataset):
    histogram = tiny_dataset.class_histogram()
    assert set(histogram) == {"class_1", "class_2"}
    assert sum(histogram.values()) == tiny_dataset.num_instances
    assert tiny_dataset.class_map == {1: "class_1", 2: "class_2"}


def _video(video_id="v", dim=2, instances=()):
    return VideoSample(video_id, np.zeros((4, dim)), GroundTruthSet(instances, 4.0), 1.0)


@pytest.mark.parametrize(
    "build, match",
    (
        pytest.param(lambda: Dataset(2, 1, ("a",), (_video(), _video())), "duplicate", id="duplicate"),
        pytest.param(lambda: Dataset(3, 1, ("a",), (_video(),)), "dimension", id="dimension"),
        pytest.param(lambda: Dataset(2, 2, ("a",), ()), "class names", id="names"),
        pytest.param(
            lambda: Dataset(2, 1, ("a",), (_video(instances=((Interval(0, 1), 2),)),)), "exceeds", id="class"
        ),
        pytest.param(
            lambda: VideoSample("v", np.full((2, 2), np.nan), GroundTruthSet((), 2.0), 1.0),
            "non-finite",
            id="nan",
        ),
        pytest.param(lambda: VideoSample("v", np.zeros((0, 2)), GroundTruthSet((), 2.0), 1.0), "non-empty", id="empty"),
    ),
)
def test_dataset_validation(build, match):
    with pytest.raises(DatasetFormatError, match=match):
        build()


def test_features_are_read_only(tiny_dataset):
    with pytest.raises(ValueError):
        tiny_dataset[0].features[0, 0] = 1.0
