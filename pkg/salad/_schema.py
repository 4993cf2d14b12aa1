# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Run configuration models and the JSON Schema generated from them, using Pydantic.
"""

from __future__ import annotations

import json
import re
from pathlib import Path
from typing import Annotated, Literal

from pydantic import BaseModel, ConfigDict, Field, model_validator

try:
    from enum import StrEnum
except ImportError:  # Python < 3.11
    from enum import Enum

    class StrEnum(str, Enum):
        def __str__(self):
            return str(self.value)


HERE = Path(__file__).parent
SCHEMA_PATH = HERE / "data" / "run.schema.json"
PositiveInt = Annotated[int, Field(ge=1)]
PositiveFloat = Annotated[float, Field(gt=0)]
_base_config_dict = ConfigDict(
    extra="forbid",
    use_attribute_docstrings=True,
)


class SelfAssessVariant(StrEnum):
    "How the binary self-assessment target y is assigned."

    SALAD = "salad"
    TOP_CONFIDENCE = "top_confidence"
    CONFIDENCE_THRESHOLD = "confidence_threshold"
    IOU_THRESHOLD = "iou_threshold"


class PruningVariant(StrEnum):
    "Which frames regress which instance (the alpha gate)."

    SALAD = "salad"
    NO_PRUNING = "no_pruning"
    TOP1_IOU = "top1iou"
    RANDOM = "random"
    FROZEN = "frozen"


class FusionStrategy(StrEnum):
    "How the proposal score combines self-assessment and classification confidence."

    REGRESSION_ONLY = "regression_only"
    ARITHMETIC_MEAN = "arithmetic_mean"
    GEOMETRIC_MEAN = "geometric_mean"
    NORMALIZED_PRODUCT = "normalized_product"


class AblationSuite(StrEnum):
    "Experiment families compared by `salad ablate`."

    PRUNING = "pruning"
    SELF_ASSESSMENT = "self_assessment"
    FUSION = "fusion"


class ThresholdPreset(StrEnum):
    THUMOS = "thumos"
    ANET = "anet"


THRESHOLD_PRESETS = {
    ThresholdPreset.THUMOS: (0.1, 0.2, 0.3, 0.4, 0.5),
    ThresholdPreset.ANET: (0.5, 0.75, 0.95),
}

ThresholdSpec = ThresholdPreset | list[Annotated[float, Field(gt=0, le=1)]]


class ReportFormat(StrEnum):
    TABLE = "table"
    CSV = "csv"
    JSON = "json"


class SynthConfig(BaseModel):
    "Synthetic feature-sequence generator settings."

    model_config: ConfigDict = _base_config_dict

    num_videos: Annotated[int, Field(ge=0)] = 250
    "Number of videos to generate."
    frames_min: PositiveInt = 128
    "Smallest video length, in frames."
    frames_max: PositiveInt = 128
    "Largest video length, in frames."
    feature_dim: PositiveInt = 16
    "Dimension D of each frame feature vector."
    num_classes: PositiveInt = 3
    "Number of action classes (background excluded). Must not exceed `feature_dim`."
    class_names: list[Annotated[str, Field(min_length=1)]] | None = None
    "Optional class names, one per action class. Defaults to `class_1`, `class_2`, ..."
    instances_min: Annotated[int, Field(ge=0)] = 1
    "Fewest action instances per video."
    instances_max: Annotated[int, Field(ge=0)] = 4
    "Most action instances per video."
    duration_min: Annotated[int, Field(ge=2)] = 8
    "Shortest instance, in frames."
    duration_max: Annotated[int, Field(ge=2)] = 24
    "Longest instance, in frames."
    snr: PositiveFloat = 5.0
    "Scale of the class direction added to the unit-variance noise inside instances."
    frame_rate: PositiveFloat = 1.0
    "Frames per second; maps frame indices to seconds."
    seed: int = 0
    "Random seed. Inherits the top-level `seed` when omitted."

    @model_validator(mode="after")
    def _check_ranges(self):
        if self.frames_min > self.frames_max:
            raise ValueError("frames_min must not exceed frames_max")
        if self.instances_min > self.instances_max:
            raise ValueError("instances_min must not exceed instances_max")
        if self.duration_min > self.duration_max:
            raise ValueError("duration_min must not exceed duration_max")
        if self.num_classes > self.feature_dim:
            raise ValueError("num_classes must not exceed feature_dim")
        if self.class_names is not None and len(self.class_names) != self.num_classes:
            raise ValueError("class_names needs exactly num_classes entries")
        return self


class ModelConfig(BaseModel):
    "Bidirectional GRU encoder and the three prediction heads."

    model_config: ConfigDict = _base_config_dict

    feature_dim: PositiveInt = 16
    "Input feature dimension D."
    hidden_dim: PositiveInt = 64
    "GRU state size per direction; the heads see twice this size."
    num_classes: PositiveInt = 3
    "Number of action classes; the classification head has one extra background output."
    head_widths: tuple[PositiveInt, PositiveInt] = (64, 32)
    "Widths of the hidden affine layers shared by the head topology."
    dtype: Literal["float32", "float64"] = "float32"
    "Floating point precision of parameters and activations."
    seed: int = 0
    "Initialization seed. Inherits the top-level `seed` when omitted."

    @classmethod
    def full_scale(cls, num_classes=20, **kwargs) -> ModelConfig:
        """Dimensions of the full-size network (2048-d fused features)."""
        return cls(
            feature_dim=2048,
            hidden_dim=1024,
            num_classes=num_classes,
            head_widths=(2048, 1024),
            **kwargs,
        )


class LossWeights(BaseModel):
    "Weights and conventions of the training objective."

    model_config: ConfigDict = _base_config_dict

    lambda1: Annotated[float, Field(ge=0)] = 1.0
    "Weight of the regression (tIoU) term against the self-assessment term."
    lambda2: Annotated[float, Field(ge=0)] = 0.1
    "Weight of the classification loss in the total loss."
    mu: Annotated[float, Field(gt=0, lt=1)] = 0.5
    "tIoU a frame's segment must strictly exceed to claim an instance."
    classification: Literal["binary", "categorical"] = "binary"
    """
    `binary` sums per-class binary cross-entropy against the one-hot label;
    `categorical` uses the usual softmax cross-entropy.
    """
    reduction: Literal["sum", "mean"] = "sum"
    "`sum` adds frame terms; `mean` divides each video's terms by its frame count."


class InferenceConfig(BaseModel):
    "Turning per-frame outputs into ranked detections."

    model_config: ConfigDict = _base_config_dict

    fusion: FusionStrategy = FusionStrategy.REGRESSION_ONLY
    "Proposal scoring rule."
    zeta: PositiveFloat = 4.0
    "Sharpness of the `normalized_product` fusion."
    sigma_nms: PositiveFloat = 0.5
    "Gaussian soft-NMS bandwidth."
    min_score: Annotated[float, Field(ge=0)] = 1e-3
    "Proposals decayed below this score are dropped."
    per_class: bool = True
    "Only proposals of the same class suppress each other."
    top_k: Annotated[int, Field(ge=0)] | None = None
    "Keep at most this many proposals per video after NMS. `null` keeps all."


class EvaluationConfig(BaseModel):
    "Detection metric settings."

    model_config: ConfigDict = _base_config_dict

    thresholds: ThresholdSpec = ThresholdPreset.THUMOS
    "tIoU thresholds: a preset name (`thumos`, `anet`) or an explicit list."
    format: ReportFormat = ReportFormat.TABLE
    "Report format written by `salad eval`."


class TrainConfig(BaseModel):
    "Optimization schedule and assignment strategies."

    model_config: ConfigDict = _base_config_dict

    epochs: Annotated[int, Field(ge=0)] = 100
    "Full-loss epochs after pre-training."
    pretrain_epochs: Annotated[int, Field(ge=0)] = 10
    "Epochs of classification-only training before the full loss."
    batch_size: PositiveInt = 4
    "Videos per optimizer step; their gradients are summed."
    learning_rate: PositiveFloat = 1e-4
    "Constant Adam step size."
    beta1: Annotated[float, Field(ge=0, lt=1)] = 0.9
    "Adam first-moment decay."
    beta2: Annotated[float, Field(ge=0, lt=1)] = 0.999
    "Adam second-moment decay."
    eps: PositiveFloat = 1e-8
    "Adam denominator guard."
    weights: LossWeights = LossWeights()
    "Loss weights and conventions."
    assignment: SelfAssessVariant = SelfAssessVariant.SALAD
    "Self-assessment target strategy."
    pruning: PruningVariant = PruningVariant.SALAD
    "Regression gate strategy."
    eval_thresholds: ThresholdSpec = ThresholdPreset.THUMOS
    "Thresholds of the per-epoch validation mAP."
    select_threshold: Annotated[float, Field(gt=0, le=1)] = 0.5
    "The validation mAP threshold that picks the best checkpoint."
    eval_every: PositiveInt = 1
    "Validate every this many epochs (and always after the last one)."
    val_fraction: Annotated[float, Field(ge=0, lt=1)] = 0.2
    "Trailing share of the videos held out for validation."
    clip_grad_norm: PositiveFloat | None = None
    "Clip the summed batch gradient to this global norm. `null` disables clipping."
    seed: int = 0
    "Shuffling and random-pruning seed. Inherits the top-level `seed` when omitted."


class RunConfig(BaseModel):
    """
    Schema for salad run configuration files.
    """

    model_config: ConfigDict = _base_config_dict

    seed: int = ...
    "Seed shared by every section that does not set its own."
    synth: SynthConfig = SynthConfig()
    "Synthetic data generation."
    model: ModelConfig = ModelConfig()
    "Network dimensions."
    train: TrainConfig = TrainConfig()
    "Training schedule."
    inference: InferenceConfig = InferenceConfig()
    "Proposal extraction and NMS."
    evaluation: EvaluationConfig = EvaluationConfig()
    "Metric thresholds and report format."

    @model_validator(mode="before")
    @classmethod
    def _inherit_seed(cls, data):
        if isinstance(data, dict) and "seed" in data:
            data = dict(data)
            for section in ("synth", "model", "train"):
                body = dict(data.get(section) or {})
                body.setdefault("seed", data["seed"])
                data[section] = body
        return data


def fix_descriptions(obj):
    for key, value in obj.items():
        if isinstance(value, dict):
            obj[key] = fix_descriptions(value)
        if key == "description" and isinstance(value, str):
            value = (
                value.replace("\n\n", "__NEWLINE__")
                .replace("\n-", "__NEWLINE__-")
                .replace("\n", " ")
                .replace("  ", " ")
                .replace("__NEWLINE__", "\n")
            )
            obj[key] = re.sub(r" +", " ", value).strip()

    return obj


def run_schema() -> dict:
    obj = RunConfig.model_json_schema()
    obj = fix_descriptions(obj)
    obj["$schema"] = "https://json-schema.org/draft/2020-12/schema"
    return obj


def dump_schema():
    obj = run_schema()
    SCHEMA_PATH.parent.mkdir(parents=True, exist_ok=True)
    SCHEMA_PATH.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")
    print(json.dumps(obj, sort_keys=True, indent=2))


if __name__ == "__main__":
    dump_schema()
