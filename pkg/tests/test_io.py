import json

import numpy as np
import pytest

from salad._schema import ModelConfig
from salad.datagen import Dataset
from salad.exceptions import CheckpointError, CheckpointMismatchError, DatasetFormatError
from salad.inference import Proposal
from salad.intervals import Interval
from salad.io import (
    CHECKPOINT_MAGIC,
    Checkpoint,
    MetricLog,
    dataset_to_dict,
    load_checkpoint,
    load_dataset,
    read_metric_log,
    read_proposals,
    save_checkpoint,
    save_dataset,
    write_proposals,
)
from salad.model import ModelParams
from salad.optim import AdamState, adam_step


def test_dataset_round_trip(tmp_path, tiny_dataset):
    path = save_dataset(tiny_dataset, tmp_path / "data.json")
    assert load_dataset(path) == tiny_dataset


def test_dataset_bytes_are_stable(tmp_path, tiny_dataset):
    a = save_dataset(tiny_dataset, tmp_path / "a.json").read_bytes()
    b = save_dataset(tiny_dataset, tmp_path / "b.json").read_bytes()
    assert a == b


def test_empty_dataset(tmp_path):
    empty = Dataset(4, 1, ("walk",), ())
    assert load_dataset(save_dataset(empty, tmp_path / "empty.json")) == empty


def _write_doc(tmp_path, tiny_dataset, mutate):
    doc = dataset_to_dict(tiny_dataset)
    mutate(doc)
    path = tmp_path / "edited.json"
    path.write_text(json.dumps(doc))
    return path


def _swap_first_annotation(doc):
    annotation = doc["videos"][1]["annotations"][0]
    annotation["start"], annotation["end"] = annotation["end"], annotation["start"]


@pytest.mark.parametrize(
    "mutate, match",
    (
        pytest.param(_swap_first_annotation, r"video 'video_00001' instance 0", id="reversed-annotation"),
        pytest.param(lambda d: d.update(version=2), "version 2", id="version"),
        pytest.param(lambda d: d.update(format="other"), "not a salad dataset", id="format"),
        pytest.param(lambda d: d["videos"][0].pop("frame_rate"), "frame_rate", id="missing-field"),
        pytest.param(lambda d: d["videos"][0]["features"][1].pop(), "equal-length", id="ragged"),
        pytest.param(
            lambda d: d["videos"][0].update(frame_rate=0),
            r"video 'video_00000': field 'frame_rate'",
            id="zero-frame-rate",
        ),
        pytest.param(
            lambda d: d["videos"][2].update(frame_rate="fast"),
            r"video 'video_00002': field 'frame_rate'",
            id="text-frame-rate",
        ),
        pytest.param(
            lambda d: d["videos"][1]["annotations"][0].update(start="x"),
            r"video 'video_00001': field 'annotations\.0\.start'",
            id="text-start",
        ),
        pytest.param(
            lambda d: d["videos"][0].update(annotations=5),
            r"video 'video_00000': field 'annotations'",
            id="annotations-not-a-list",
        ),
        pytest.param(lambda d: d.update(feature_dim="four"), "field 'feature_dim'", id="text-feature-dim"),
        pytest.param(lambda d: d["videos"].__setitem__(0, 7), "video record 0", id="record-not-a-mapping"),
    ),
)
def test_malformed_dataset(tmp_path, tiny_dataset, mutate, match):
    with pytest.raises(DatasetFormatError, match=match):
        load_dataset(_write_doc(tmp_path, tiny_dataset, mutate))


def test_non_finite_numbers_are_rejected(tmp_path, tiny_dataset):
    def poison(doc):
        doc["videos"][0]["features"][0][0] = float("nan")

    with pytest.raises(DatasetFormatError, match="non-finite"):
        load_dataset(_write_doc(tmp_path, tiny_dataset, poison))


def test_missing_dataset_file(tmp_path):
    with pytest.raises(DatasetFormatError, match="cannot read"):
        load_dataset(tmp_path / "nope.json")


def _trained_checkpoint(cfg):
    params = ModelParams.initialize(cfg)
    adam = AdamState.zeros_like(params.arrays)
    grads = {name: np.full_like(array, 0.01) for name, array in params.arrays.items()}
    adam_step(params.arrays, grads, adam, lr=1e-3)
    alpha = {"video_00000": np.array([[1, 0], [0, 1]], dtype=np.int8)}
    return Checkpoint({"seed": 3}, params, adam, step=1, epoch=1, frozen_alpha=alpha)


def test_checkpoint_round_trip(tmp_path, tiny_model):
    original = _trained_checkpoint(tiny_model)
    loaded = load_checkpoint(save_checkpoint(original, tmp_path / "model.ckpt"))
    assert loaded.step == 1 and loaded.epoch == 1
    assert loaded.model_config == tiny_model
    assert loaded.config["seed"] == 3
    for name in original.params:
        assert np.array_equal(loaded.params[name], original.params[name])
        assert np.array_equal(loaded.adam.m[name], original.adam.m[name])
        assert np.array_equal(loaded.adam.v[name], original.adam.v[name])
        assert loaded.adam.t[name] == 1
    np.testing.assert_array_equal(loaded.frozen_alpha["video_00000"], [[1, 0], [0, 1]])


def test_checkpoint_carries_the_best_parameters(tmp_path, tiny_model):
    checkpoint = _trained_checkpoint(tiny_model)
    checkpoint.best_params = ModelParams.initialize(tiny_model)
    checkpoint.best_epoch, checkpoint.best_map = 1, 0.625
    loaded = load_checkpoint(save_checkpoint(checkpoint, tmp_path / "model.ckpt"))
    assert (loaded.best_epoch, loaded.best_map) == (1, 0.625)
    for name in checkpoint.best_params:
        assert np.array_equal(loaded.best_params[name], checkpoint.best_params[name])
    plain = save_checkpoint(_trained_checkpoint(tiny_model), tmp_path / "plain.ckpt")
    assert load_checkpoint(plain).best_params is None


def test_checkpoint_bytes_are_stable(tmp_path, tiny_model):
    a = save_checkpoint(_trained_checkpoint(tiny_model), tmp_path / "a.ckpt").read_bytes()
    b = save_checkpoint(_trained_checkpoint(tiny_model), tmp_path / "b.ckpt").read_bytes()
    assert a == b
    assert a.startswith(CHECKPOINT_MAGIC)


def test_checkpoint_into_a_wider_model(tmp_path):
    narrow = ModelConfig(feature_dim=4, hidden_dim=8, num_classes=2, head_widths=(8, 6))
    path = save_checkpoint(_trained_checkpoint(narrow), tmp_path / "narrow.ckpt")
    with pytest.raises(CheckpointMismatchError) as exc:
        load_checkpoint(path, narrow.model_copy(update={"hidden_dim": 16}))
    assert "gru_fwd.W_z" in str(exc.value)
    assert exc.value.exit_code == 2


def test_missing_optimizer_state(tmp_path, tiny_model):
    params = ModelParams.initialize(tiny_model)
    path = save_checkpoint(Checkpoint({}, params), tmp_path / "bare.ckpt")
    with pytest.raises(CheckpointError, match="--reset-optimizer"):
        load_checkpoint(path)
    loaded = load_checkpoint(path, reset_optimizer=True)
    assert all(np.array_equal(loaded.params[n], params[n]) for n in params)
    assert all(not loaded.adam.m[n].any() for n in params)
    assert set(loaded.adam.t.values()) == {0}


@pytest.mark.parametrize(
    "payload, match",
    (
        pytest.param(b"not a checkpoint", "not a salad checkpoint", id="magic"),
        pytest.param(CHECKPOINT_MAGIC + b"\x02\x00\x00\x00", "version 2", id="version"),
        pytest.param(CHECKPOINT_MAGIC + b"\x01\x00\x00\x00", "no 'config' section", id="empty"),
        pytest.param(CHECKPOINT_MAGIC + b"\x01\x00\x00\x00\x06\x00\x00\x00config\xff", "corrupt", id="truncated"),
    ),
)
def test_corrupt_checkpoint(tmp_path, payload, match):
    path = tmp_path / "bad.ckpt"
    path.write_bytes(payload)
    with pytest.raises(CheckpointError, match=match):
        load_checkpoint(path)


def test_proposal_round_trip(tmp_path):
    proposals = {
        "video_00000": [Proposal(Interval(0.5, 3.25), 0.875, 2), Proposal(Interval(1 / 3, 2.0), 0.1, 1)],
        "video_00001": [],
        "video_00002": [Proposal(Interval(4.0, 7.0), 0.5, 1)],
    }
    path = write_proposals(proposals, tmp_path / "proposals.csv")
    assert path.read_text().splitlines()[0] == "video_id,start,end,score,class_id"
    loaded = read_proposals(path)
    assert loaded["video_00000"][0] == proposals["video_00000"][0]
    assert loaded["video_00000"][1].interval.start == pytest.approx(1 / 3, rel=1e-11)
    assert "video_00001" not in loaded
    assert loaded["video_00002"] == proposals["video_00002"]


@pytest.mark.parametrize(
    "text, match",
    (
        pytest.param("id,begin\n", "expected header", id="header"),
        pytest.param("video_id,start,end,score,class_id\nv,1,2\n", "expected 5 fields", id="fields"),
        pytest.param("video_id,start,end,score,class_id\nv,3,2,0.5,1\n", ":2:", id="reversed"),
        pytest.param("video_id,start,end,score,class_id\nv,1,2,high,1\n", ":2:", id="number"),
    ),
)
def test_malformed_proposals(tmp_path, text, match):
    path = tmp_path / "p.csv"
    path.write_text(text)
    with pytest.raises(DatasetFormatError, match=match):
        read_proposals(path)


def test_empty_proposal_file(tmp_path):
    path = tmp_path / "empty.csv"
    path.write_text("")
    assert read_proposals(path) == {}


def test_metric_log(tmp_path):
    log = MetricLog(tmp_path / "metrics.jsonl", truncate=True)
    log.append({"loss": 1.5, "epoch": 1})
    log.append({"loss": 1.25, "epoch": 2})
    lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
    assert lines[0] == '{"epoch": 1, "loss": 1.5}'
    assert [r["epoch"] for r in read_metric_log(log.path)] == [1, 2]
    MetricLog(log.path).append({"epoch": 3})
    assert len(read_metric_log(log.path)) == 3
    MetricLog(log.path, truncate=True)
    assert read_metric_log(log.path) == []
