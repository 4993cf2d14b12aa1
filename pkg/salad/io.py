# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
On-disk formats: dataset documents, binary checkpoints, proposal dumps and
line-delimited metric logs.

Checkpoint layout (little-endian)::

    b"SALADCKPT" u32 version
    repeated: u32 name length, name (utf-8), u64 payload length, payload

Sections are ``config`` (JSON), ``meta`` (JSON: step, epoch, Adam step
counts), ``param/<name>``, ``adam_m/<name>``, ``adam_v/<name>`` and
``frozen_alpha/<video_id>`` plus, for a run that has been validated,
``best/<name>`` holding the best parameters so far (their epoch and mAP
live in ``meta``). A tensor payload is u32 ndim, ndim u32 dims,
then float32 row-major data.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Annotated

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, FiniteFloat, ValidationError

from ._schema import ModelConfig, _base_config_dict
from .assignment import GroundTruthSet
from .datagen import Dataset, VideoSample
from .exceptions import (
    AssignmentError,
    CheckpointError,
    CheckpointMismatchError,
    DatasetFormatError,
    IntervalError,
)
from .inference import Proposal
from .intervals import Interval
from .model import ModelParams, parameter_shapes
from .optim import AdamState
from .utils import write_bytes_atomic, write_text_atomic

if TYPE_CHECKING:
    from collections.abc import Mapping, Sequence

logger = logging.getLogger(__name__)

DATASET_FORMAT = "salad-dataset"
DATASET_VERSION = 1
CHECKPOINT_MAGIC = b"SALADCKPT"
CHECKPOINT_VERSION = 1
PROPOSAL_HEADER = ("video_id", "start", "end", "score", "class_id")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")


# datasets


def _reject_constant(name):
    raise DatasetFormatError(f"non-finite number '{name}' in dataset file")


def _short_float(value) -> float:
    # shortest decimal that reads back to the same float32
    return float(str(np.float32(value)))


def dataset_to_dict(dataset: Dataset) -> dict:
    videos = []
    for video in dataset.videos:
        videos.append(
            {
                "video_id": video.video_id,
                "frame_rate": video.frame_rate,
                "annotations": [
                    {"start": interval.start, "end": interval.end, "class_id": class_id}
                    for interval, class_id in video.ground_truth.instances
                ],
                "features": [[_short_float(v) for v in row] for row in video.features],
            }
        )
    return {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "feature_dim": dataset.feature_dim,
        "num_classes": dataset.num_classes,
        "class_names": list(dataset.class_names),
        "videos": videos,
    }


def save_dataset(dataset: Dataset, path: str | Path) -> Path:
    path = Path(path)
    text = json.dumps(dataset_to_dict(dataset), allow_nan=False, separators=(",", ":"))
    write_text_atomic(path, text + "\n")
    logger.info("wrote %d videos to %s", len(dataset), path)
    return path


class AnnotationRecord(BaseModel):
    model_config: ConfigDict = _base_config_dict

    start: FiniteFloat
    end: FiniteFloat
    class_id: int


class VideoRecord(BaseModel):
    model_config: ConfigDict = _base_config_dict

    video_id: str
    frame_rate: Annotated[FiniteFloat, Field(gt=0)]
    annotations: list[AnnotationRecord]
    features: list


class DatasetHeader(BaseModel):
    model_config: ConfigDict = ConfigDict(extra="ignore")

    feature_dim: Annotated[int, Field(ge=1)]
    num_classes: Annotated[int, Field(ge=1)]
    class_names: list[str]
    videos: list


def _format_validation_error(where: str, exc: ValidationError) -> DatasetFormatError:
    problems = []
    for error in exc.errors():
        loc = ".".join(str(part) for part in error["loc"])
        if not loc:
            problems.append(error["msg"])
        elif error["type"] == "missing":
            problems.append(f"missing field '{loc}'")
        else:
            problems.append(f"field '{loc}': {error['msg']}")
    return DatasetFormatError(f"{where}: " + "; ".join(problems))


def _load_video(record, position: int) -> VideoSample:
    where = f"video record {position}"
    if isinstance(record, dict) and isinstance(record.get("video_id"), str):
        where = f"video '{record['video_id']}'"
    try:
        parsed = VideoRecord.model_validate(record)
    except ValidationError as exc:
        raise _format_validation_error(where, exc) from exc
    try:
        features = np.asarray(parsed.features, dtype=np.float32)
    except (TypeError, ValueError):
        features = np.empty(0, dtype=np.float32)
    if features.ndim != 2 or features.shape[0] < 1:
        raise DatasetFormatError(f"{where}: features must be a non-empty list of equal-length rows")
    instances = []
    for index, annotation in enumerate(parsed.annotations):
        label = f"{where} instance {index}"
        start, end = annotation.start, annotation.end
        if not end > start:
            raise DatasetFormatError(f"{label}: end {end} must be after start {start}")
        try:
            instances.append((Interval(start, end), annotation.class_id))
        except IntervalError as exc:
            raise DatasetFormatError(f"{label}: {exc}") from exc
    try:
        gts = GroundTruthSet(tuple(instances), features.shape[0] / parsed.frame_rate)
    except AssignmentError as exc:
        raise DatasetFormatError(f"{where}: {exc}") from exc
    return VideoSample(parsed.video_id, features, gts, parsed.frame_rate)


def load_dataset(path: str | Path) -> Dataset:
    """Read a dataset document.

    Raises
    ------
    DatasetFormatError
        If the file is unreadable, is not a dataset document, or any record
        has a missing or mistyped field; the message names the video.
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetFormatError(f"cannot read dataset file {path}: {exc}") from exc
    try:
        doc = json.loads(text, parse_constant=_reject_constant)
    except json.JSONDecodeError as exc:
        raise DatasetFormatError(f"{path} is not a valid dataset document: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != DATASET_FORMAT:
        raise DatasetFormatError(f"{path} is not a salad dataset document")
    if doc.get("version") != DATASET_VERSION:
        raise DatasetFormatError(
            f"{path} has dataset format version {doc.get('version')}, expected {DATASET_VERSION}"
        )
    try:
        header = DatasetHeader.model_validate(doc)
    except ValidationError as exc:
        raise _format_validation_error(str(path), exc) from exc
    return Dataset(
        feature_dim=header.feature_dim,
        num_classes=header.num_classes,
        class_names=tuple(header.class_names),
        videos=tuple(_load_video(record, i) for i, record in enumerate(header.videos)),
    )


# checkpoints


@dataclass
class Checkpoint:
    config: dict
    params: ModelParams
    adam: AdamState | None = None
    step: int = 0
    epoch: int = 0
    frozen_alpha: dict[str, np.ndarray] = field(default_factory=dict)
    best_params: ModelParams | None = None
    best_epoch: int | None = None
    best_map: float | None = None

    @property
    def model_config(self) -> ModelConfig:
        return self.params.config


def _pack_tensor(array: np.ndarray) -> bytes:
    array = np.ascontiguousarray(array, dtype="<f4")
    header = _U32.pack(array.ndim) + b"".join(_U32.pack(d) for d in array.shape)
    return header + array.tobytes()


def _unpack_tensor(payload: bytes, name: str) -> np.ndarray:
    try:
        (ndim,) = _U32.unpack_from(payload, 0)
        shape = struct.unpack_from(f"<{ndim}I", payload, 4)
        offset = 4 + 4 * ndim
        count = math.prod(shape)
        if len(payload) - offset != 4 * count:
            raise CheckpointError(f"section '{name}' holds {len(payload) - offset} bytes for shape {shape}")
        return np.frombuffer(payload, dtype="<f4", count=count, offset=offset).reshape(shape).copy()
    except struct.error as exc:
        raise CheckpointError(f"section '{name}' is truncated") from exc


def _section(name: str, payload: bytes) -> bytes:
    encoded = name.encode("utf-8")
    return _U32.pack(len(encoded)) + encoded + _U64.pack(len(payload)) + payload


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, allow_nan=False).encode("utf-8")


def save_checkpoint(checkpoint: Checkpoint, path: str | Path) -> Path:
    path = Path(path)
    meta = {"step": checkpoint.step, "epoch": checkpoint.epoch}
    if checkpoint.adam is not None:
        meta["adam_t"] = checkpoint.adam.t
    if checkpoint.best_params is not None:
        meta["best_epoch"] = checkpoint.best_epoch
        meta["best_map"] = checkpoint.best_map
    config = dict(checkpoint.config)
    config["model"] = checkpoint.params.config.model_dump(mode="json")
    chunks = [CHECKPOINT_MAGIC, _U32.pack(CHECKPOINT_VERSION)]
    chunks.append(_section("config", _json_bytes(config)))
    chunks.append(_section("meta", _json_bytes(meta)))
    for name, array in checkpoint.params.arrays.items():
        chunks.append(_section(f"param/{name}", _pack_tensor(array)))
    if checkpoint.adam is not None:
        for name in checkpoint.params.arrays:
            if name in checkpoint.adam.m:
                chunks.append(_section(f"adam_m/{name}", _pack_tensor(checkpoint.adam.m[name])))
                chunks.append(_section(f"adam_v/{name}", _pack_tensor(checkpoint.adam.v[name])))
    for video_id, alpha in sorted(checkpoint.frozen_alpha.items()):
        chunks.append(_section(f"frozen_alpha/{video_id}", _pack_tensor(alpha)))
    if checkpoint.best_params is not None:
        for name, array in checkpoint.best_params.arrays.items():
            chunks.append(_section(f"best/{name}", _pack_tensor(array)))
    write_bytes_atomic(path, b"".join(chunks))
    logger.debug("wrote checkpoint %s (step %d)", path, checkpoint.step)
    return path


def _read_sections(blob: bytes, path: Path) -> dict[str, bytes]:
    if not blob.startswith(CHECKPOINT_MAGIC):
        raise CheckpointError(f"{path} is not a salad checkpoint")
    offset = len(CHECKPOINT_MAGIC)
    try:
        (version,) = _U32.unpack_from(blob, offset)
        offset += 4
        if version != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"{path} has checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )
        sections = {}
        while offset < len(blob):
            (name_len,) = _U32.unpack_from(blob, offset)
            offset += 4
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (size,) = _U64.unpack_from(blob, offset)
            offset += 8
            if offset + size > len(blob):
                raise CheckpointError(f"{path}: section '{name}' is truncated")
            sections[name] = blob[offset : offset + size]
            offset += size
    except (struct.error, UnicodeDecodeError) as exc:
        raise CheckpointError(f"{path} is corrupt: {exc}") from exc
    return sections


def _params_from_sections(
    sections: Mapping[str, bytes], prefix: str, config: ModelConfig
) -> ModelParams:
    arrays = {
        name.split("/", 1)[1]: _unpack_tensor(payload, name)
        for name, payload in sections.items()
        if name.startswith(prefix)
    }
    expected = parameter_shapes(config)
    offenders = [f"{name} (missing)" for name in expected if name not in arrays]
    offenders.extend(f"{name} (unexpected)" for name in arrays if name not in expected)
    offenders.extend(
        f"{name} (checkpoint {arrays[name].shape}, config {shape})"
        for name, shape in expected.items()
        if name in arrays and arrays[name].shape != shape
    )
    if offenders:
        raise CheckpointMismatchError(offenders)
    return ModelParams(config, arrays)


def load_checkpoint(
    path: str | Path,
    model_cfg: ModelConfig | None = None,
    reset_optimizer: bool = False,
) -> Checkpoint:
    """Read a checkpoint, optionally checking it against ``model_cfg``.

    Raises
    ------
    CheckpointMismatchError
        If parameter names or shapes differ from ``model_cfg``.
    CheckpointError
        If the file is malformed, or holds no optimizer state and
        ``reset_optimizer`` is false.
    """
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    sections = _read_sections(blob, path)
    for required in ("config", "meta"):
        if required not in sections:
            raise CheckpointError(f"{path} has no '{required}' section")
    config = json.loads(sections["config"])
    meta = json.loads(sections["meta"])
    try:
        stored_cfg = ModelConfig(**config["model"])
    except (KeyError, TypeError, ValidationError) as exc:
        raise CheckpointError(f"{path} carries an unreadable model config") from exc
    target_cfg = model_cfg or stored_cfg
    params = _params_from_sections(sections, "param/", target_cfg)
    best_params = None
    if any(name.startswith("best/") for name in sections):
        best_params = _params_from_sections(sections, "best/", target_cfg)

    adam = None
    has_moments = any(name.startswith("adam_m/") for name in sections)
    if reset_optimizer:
        adam = AdamState.zeros_like(params.arrays)
    elif not has_moments:
        raise CheckpointError(
            f"{path} has no optimizer state; pass --reset-optimizer to start Adam afresh"
        )
    else:
        dtype = params.arrays[next(iter(params.arrays))].dtype
        adam = AdamState()
        steps = meta.get("adam_t", {})
        for name in params.arrays:
            if f"adam_m/{name}" in sections:
                adam.m[name] = _unpack_tensor(sections[f"adam_m/{name}"], name).astype(dtype)
                adam.v[name] = _unpack_tensor(sections[f"adam_v/{name}"], name).astype(dtype)
                adam.t[name] = int(steps.get(name, 0))
    frozen = {
        name.split("/", 1)[1]: _unpack_tensor(payload, name).astype(np.int8)
        for name, payload in sections.items()
        if name.startswith("frozen_alpha/")
    }
    return Checkpoint(
        config=config,
        params=params,
        adam=adam,
        step=int(meta.get("step", 0)),
        epoch=int(meta.get("epoch", 0)),
        frozen_alpha=frozen,
        best_params=best_params,
        best_epoch=meta.get("best_epoch"),
        best_map=meta.get("best_map"),
    )


# proposals


def write_proposals(proposals: Mapping[str, Sequence[Proposal]], path: str | Path) -> Path:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(PROPOSAL_HEADER)
    for video_id, video_proposals in proposals.items():
        for p in video_proposals:
            writer.writerow(
                [video_id, f"{p.interval.start:.12g}", f"{p.interval.end:.12g}", f"{p.score:.12g}", p.class_id]
            )
    path = Path(path)
    write_text_atomic(path, buffer.getvalue())
    return path


def read_proposals(path: str | Path) -> dict[str, list[Proposal]]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DatasetFormatError(f"cannot read proposal file {path}: {exc}") from exc
    proposals: dict[str, list[Proposal]] = {}
    if not text.strip():
        return proposals
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if tuple(header or ()) != PROPOSAL_HEADER:
        raise DatasetFormatError(f"{path}: expected header {','.join(PROPOSAL_HEADER)}")
    for line, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(PROPOSAL_HEADER):
            raise DatasetFormatError(f"{path}:{line}: expected {len(PROPOSAL_HEADER)} fields")
        video_id, start, end, score, class_id = row
        try:
            proposal = Proposal(Interval(float(start), float(end)), float(score), int(class_id))
        except (ValueError, IntervalError) as exc:
            raise DatasetFormatError(f"{path}:{line}: {exc}") from exc
        proposals.setdefault(video_id, []).append(proposal)
    return proposals


# metric logs


class MetricLog:
    """Append-only JSON-lines log with sorted keys."""

    def __init__(self, path: str | Path, truncate: bool = False):
        self.path = Path(path)
        if truncate:
            self.path.write_text("", encoding="utf-8")

    def append(self, record: Mapping):
        with open(self.path, "a", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps(record, sort_keys=True, allow_nan=False) + "\n")


def read_metric_log(path: str | Path) -> list[dict]:
    records = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            records.append(json.loads(line))
    return records
