import os
from pathlib import Path
from textwrap import dedent

import numpy as np
import pytest

from salad._schema import ModelConfig, SynthConfig, TrainConfig
from salad.assignment import FramePrediction, GroundTruthSet
from salad.datagen import generate_synthetic
from salad.intervals import Interval

REPO_DIR = Path(__file__).parent.parent
CONFIGS_DIR = REPO_DIR / "configs"

TINY_CONFIG = dedent(
    """
    seed: 7
    synth:
      num_videos: 6
      frames_min: 12
      frames_max: 16
      feature_dim: 4
      num_classes: 2
      instances_min: 1
      instances_max: 2
      duration_min: 3
      duration_max: 5
    model:
      feature_dim: 4
      hidden_dim: 6
      num_classes: 2
      head_widths: [8, 6]
    train:
      epochs: 2
      pretrain_epochs: 1
      batch_size: 2
      learning_rate: 0.001
      val_fraction: 0.34
    """
)


def pytest_collection_modifyitems(config, items):
    if os.environ.get("SALAD_RUN_BENCHMARKS") == "1":
        return
    skip = pytest.mark.skip(reason="set SALAD_RUN_BENCHMARKS=1 to run the synthetic benchmarks")
    for item in items:
        if "benchmark" in item.keywords:
            item.add_marker(skip)


@pytest.fixture(scope="session")
def configs_dir():
    return CONFIGS_DIR


@pytest.fixture
def worked_example():
    """Four frames, one instance [0, 2]; frame 2 claims it at mu = 0.5."""
    p_hat = (0.9, 0.2, 0.8, 0.5)
    intervals = (Interval(0, 1), Interval(0, 1.5), Interval(0, 2.2), Interval(2.5, 3.5))
    preds = [
        FramePrediction(float(t), interval, p, ())
        for t, (interval, p) in enumerate(zip(intervals, p_hat))
    ]
    gts = GroundTruthSet(((Interval(0, 2), 1),), video_length=4.0)
    return preds, gts


@pytest.fixture
def tiny_synth():
    return SynthConfig(
        num_videos=6,
        frames_min=12,
        frames_max=16,
        feature_dim=4,
        num_classes=2,
        instances_min=1,
        instances_max=2,
        duration_min=3,
        duration_max=5,
        seed=7,
    )


@pytest.fixture
def tiny_dataset(tiny_synth):
    return generate_synthetic(tiny_synth)


@pytest.fixture
def tiny_model():
    return ModelConfig(feature_dim=4, hidden_dim=6, num_classes=2, head_widths=(8, 6), seed=3)


@pytest.fixture
def tiny_train():
    return TrainConfig(
        epochs=2,
        pretrain_epochs=1,
        batch_size=2,
        learning_rate=1e-3,
        val_fraction=0.34,
        seed=11,
    )


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "run.yaml"
    path.write_text(TINY_CONFIG)
    return path


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
