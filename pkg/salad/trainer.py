# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Training loop and the ablation experiment driver.

An epoch visits the training videos in a seeded shuffled order, in batches
of ``batch_size`` videos. Each video runs forward and backward on a worker
thread with its own graph; the batch gradients are summed in batch order and
applied by one Adam step. During the first ``pretrain_epochs`` only the
classification loss is optimized and the regression and scoring heads stay
untouched.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

import numpy as np

from ._schema import (
    AblationSuite,
    FusionStrategy,
    InferenceConfig,
    PruningVariant,
    SelfAssessVariant,
)
from .assignment import compute_status, containment_matrix
from .evaluation import EvalReport, map_at_thresholds, resolve_thresholds
from .exceptions import ConfigError, NumericalError
from .inference import detect
from .intervals import segments_from_offsets
from .io import Checkpoint
from .loss import frame_labels, loss_cls, loss_total
from .model import (
    REGRESSION_PREFIX,
    SCORING_PREFIX,
    ModelParams,
    anchor_times,
    forward,
    is_head_parameter,
    to_frame_predictions,
)
from .optim import AdamState, adam_step, check_finite, clip_grad_norm
from .utils import worker_count

if TYPE_CHECKING:
    from collections.abc import Callable, Mapping, Sequence

    from ._schema import ModelConfig, TrainConfig
    from .datagen import Dataset, VideoSample
    from .io import MetricLog

logger = logging.getLogger(__name__)

PRETRAIN = "pretrain"
FULL = "full"

ABLATION_ROWS = {
    AblationSuite.PRUNING: (
        ("No Pruning", PruningVariant.NO_PRUNING),
        ("Top 1 IoU", PruningVariant.TOP1_IOU),
        ("Random", PruningVariant.RANDOM),
        ("Frozen", PruningVariant.FROZEN),
        ("SALAD", PruningVariant.SALAD),
    ),
    AblationSuite.SELF_ASSESSMENT: (
        ("y_t=1 ⇔ t=σ(0)", SelfAssessVariant.TOP_CONFIDENCE),
        ("y_t=1 ⇔ p̂_t>0.5", SelfAssessVariant.CONFIDENCE_THRESHOLD),
        ("y_t=1 ⇔ tIoU_t>μ", SelfAssessVariant.IOU_THRESHOLD),
        ("SALAD", SelfAssessVariant.SALAD),
    ),
    AblationSuite.FUSION: (
        ("Arithmetic mean", FusionStrategy.ARITHMETIC_MEAN),
        ("Geometric mean", FusionStrategy.GEOMETRIC_MEAN),
        ("Normalized product", FusionStrategy.NORMALIZED_PRODUCT),
        ("SALAD", FusionStrategy.REGRESSION_ONLY),
    ),
}


@dataclass
class VideoStep:
    loss: float
    grads: dict[str, np.ndarray]
    num_positive: int = 0
    pruned: int = 0
    inside: int = 0


@dataclass
class TrainResult:
    params: ModelParams
    adam: AdamState
    step: int
    epoch: int
    history: list[dict] = field(default_factory=list)
    best_params: ModelParams | None = None
    best_epoch: int | None = None
    best_map: float | None = None
    frozen_alpha: dict[str, np.ndarray] = field(default_factory=dict)

    def checkpoint(self, config: Mapping, best: bool = False) -> Checkpoint:
        if best and self.best_params is not None:
            return Checkpoint(dict(config), self.best_params, None, self.step, self.best_epoch or 0)
        return Checkpoint(
            dict(config),
            self.params,
            self.adam,
            self.step,
            self.epoch,
            dict(self.frozen_alpha),
            best_params=self.best_params,
            best_epoch=self.best_epoch,
            best_map=self.best_map,
        )


def pruning_seed(seed: int, epoch: int, video_index: int) -> int:
    return int(np.random.SeedSequence([seed, epoch, video_index]).generate_state(1)[0])


def trainable_names(params: ModelParams, phase: str) -> list[str]:
    if phase == PRETRAIN:
        return [n for n in params if not is_head_parameter(n, REGRESSION_PREFIX, SCORING_PREFIX)]
    return params.names()


def video_status(output, video: VideoSample, train_cfg: TrainConfig, rng_seed=None, frozen_alpha=None):
    anchors = anchor_times(video.num_frames, video.frame_rate)
    preds = to_frame_predictions(output, anchors, video.duration)
    return compute_status(
        preds,
        video.ground_truth,
        train_cfg.weights.mu,
        train_cfg.assignment,
        train_cfg.pruning,
        rng_seed=rng_seed,
        frozen_alpha=frozen_alpha,
    )


def video_step(
    video: VideoSample,
    video_index: int,
    params: ModelParams,
    phase: str,
    train_cfg: TrainConfig,
    epoch: int,
    frozen_alpha: Mapping[str, np.ndarray] | None = None,
) -> VideoStep:
    """Forward and backward pass of a single video; returns the loss and gradients."""
    tensors = params.as_tensors(requires_grad=True)
    output = forward(video.features, tensors, params.config)
    anchors = anchor_times(video.num_frames, video.frame_rate)
    labels = frame_labels(video.ground_truth, anchors)
    weights = train_cfg.weights
    stats = {}
    if phase == PRETRAIN:
        loss = loss_cls(output.class_probs, labels, weights.classification, weights.reduction)
    else:
        status = video_status(
            output,
            video,
            train_cfg,
            rng_seed=pruning_seed(train_cfg.seed, epoch, video_index),
            frozen_alpha=(frozen_alpha or {}).get(video.video_id),
        )
        segments = segments_from_offsets(output.offsets, anchors, video.duration)
        loss = loss_total(
            output.p_hat, segments, output.class_probs, video.ground_truth, status, labels, weights
        )
        if len(video.ground_truth):
            containment = containment_matrix(anchors, video.ground_truth)
            stats = {
                "num_positive": status.num_positive,
                "pruned": int(status.pruned_mask(containment).sum()),
                "inside": int(containment.any(axis=1).sum()),
            }
    loss.backward()
    grads = {
        name: tensor.grad if tensor.grad is not None else np.zeros_like(tensor.data)
        for name, tensor in tensors.items()
    }
    return VideoStep(float(loss.item()), grads, **stats)


def evaluate(
    params: ModelParams,
    dataset: Dataset,
    inference_cfg: InferenceConfig | None = None,
    thresholds=None,
    pool: ThreadPoolExecutor | None = None,
) -> EvalReport:
    """Detect on every video of ``dataset`` and score the detections."""
    inference_cfg = inference_cfg or InferenceConfig()

    def run(video):
        return detect(video.features, params, video.frame_rate, inference_cfg)

    mapper = pool.map if pool is not None else map
    detections = dict(zip((v.video_id for v in dataset), mapper(run, dataset.videos)))
    gts = {v.video_id: v.ground_truth for v in dataset}
    return map_at_thresholds(
        detections, gts, thresholds if thresholds is not None else "thumos", dataset.class_map
    )


def capture_frozen_alpha(
    params: ModelParams, dataset: Dataset, train_cfg: TrainConfig
) -> dict[str, np.ndarray]:
    """The SALAD regression gate of every video under the current parameters."""
    salad_cfg = train_cfg.model_copy(
        update={"assignment": SelfAssessVariant.SALAD, "pruning": PruningVariant.SALAD}
    )
    captured = {}
    for video in dataset:
        output = forward(video.features, params)
        captured[video.video_id] = video_status(output, video, salad_cfg).alpha.copy()
    return captured


def _check_compatible(dataset: Dataset, model_cfg: ModelConfig):
    problems = []
    if dataset.num_classes != model_cfg.num_classes:
        problems.append(
            f"model.num_classes is {model_cfg.num_classes} but the dataset has {dataset.num_classes} classes"
        )
    if dataset.feature_dim != model_cfg.feature_dim:
        problems.append(
            f"model.feature_dim is {model_cfg.feature_dim} but the dataset features have "
            f"dimension {dataset.feature_dim}"
        )
    if problems:
        raise ConfigError(problems)


def _threshold_key(thresh: float) -> str:
    return f"{thresh:g}"


def train(
    dataset: Dataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    inference_cfg: InferenceConfig | None = None,
    *,
    resume: Checkpoint | None = None,
    frozen_alpha: Mapping[str, np.ndarray] | None = None,
    capture_alpha: bool = False,
    metric_log: MetricLog | None = None,
    on_epoch: Callable[[TrainResult], None] | None = None,
    workers: int | None = None,
) -> TrainResult:
    """Pre-train the classifier, then optimize the full loss.

    Raises
    ------
    ConfigError
        If the dataset does not fit ``model_cfg`` or leaves no training videos.
    NumericalError
        If a batch loss or gradient is not finite; the message names the
        epoch and batch.
    """
    _check_compatible(dataset, model_cfg)
    train_set, val_set = dataset.split(train_cfg.val_fraction)
    if not len(train_set):
        raise ConfigError("the dataset leaves no videos for training")
    inference_cfg = inference_cfg or InferenceConfig()
    thresholds = tuple(
        sorted(set(resolve_thresholds(train_cfg.eval_thresholds)) | {train_cfg.select_threshold})
    )

    if resume is not None:
        params = resume.params.copy()
        adam = resume.adam.copy() if resume.adam is not None else AdamState.zeros_like(params.arrays)
        result = TrainResult(params, adam, resume.step, resume.epoch)
        if resume.best_params is not None:
            result.best_params = resume.best_params.copy()
            result.best_epoch = resume.best_epoch
            result.best_map = resume.best_map
        if resume.frozen_alpha and frozen_alpha is None:
            frozen_alpha = resume.frozen_alpha
    else:
        params = ModelParams.initialize(model_cfg)
        result = TrainResult(params, AdamState.zeros_like(params.arrays), 0, 0)

    total_epochs = train_cfg.pretrain_epochs + train_cfg.epochs
    logger.info(
        "training on %d videos (%d held out) for %d epochs, %d of them pre-training",
        len(train_set),
        len(val_set),
        total_epochs,
        train_cfg.pretrain_epochs,
    )
    with ThreadPoolExecutor(max_workers=workers or worker_count()) as pool:
        for epoch in range(result.epoch + 1, total_epochs + 1):
            phase = PRETRAIN if epoch <= train_cfg.pretrain_epochs else FULL
            record = _run_epoch(
                epoch, phase, train_set, result, train_cfg, frozen_alpha, pool
            )
            result.epoch = epoch
            if len(val_set) and (epoch % train_cfg.eval_every == 0 or epoch == total_epochs):
                report = evaluate(result.params, val_set, inference_cfg, thresholds, pool)
                record["val_map"] = {_threshold_key(t): report.mean_ap[t] for t in report.thresholds}
                selected = report.map_at(train_cfg.select_threshold)
                if result.best_map is None or selected > result.best_map:
                    result.best_map = selected
                    result.best_epoch = epoch
                    result.best_params = result.params.copy()
                    record["best"] = True
            logger.info(
                "epoch %d/%d [%s] loss=%.4f positives=%s pruned=%s mAP@%g=%s",
                epoch,
                total_epochs,
                phase,
                record["loss"],
                record["num_positive"],
                "-" if record["pruned_fraction"] is None else f"{record['pruned_fraction']:.3f}",
                train_cfg.select_threshold,
                "-"
                if record["val_map"] is None
                else f"{record['val_map'][_threshold_key(train_cfg.select_threshold)]:.4f}",
            )
            result.history.append(record)
            if metric_log is not None:
                metric_log.append(record)
            if on_epoch is not None:
                on_epoch(result)

    if result.best_params is None:
        result.best_params = result.params.copy()
        result.best_epoch = result.epoch
    if capture_alpha:
        result.frozen_alpha = capture_frozen_alpha(result.params, train_set, train_cfg)
    return result


def _run_epoch(epoch, phase, train_set, result, train_cfg, frozen_alpha, pool) -> dict:
    rng = np.random.default_rng(np.random.SeedSequence([train_cfg.seed, epoch]))
    order = rng.permutation(len(train_set))
    names = trainable_names(result.params, phase)
    epoch_loss = 0.0
    positives = pruned = inside = 0
    for batch, start in enumerate(range(0, len(order), train_cfg.batch_size)):
        indices = [int(i) for i in order[start : start + train_cfg.batch_size]]
        steps = list(
            pool.map(
                lambda i: video_step(
                    train_set[i], i, result.params, phase, train_cfg, epoch, frozen_alpha
                ),
                indices,
            )
        )
        batch_loss = math.fsum(s.loss for s in steps)
        if not math.isfinite(batch_loss):
            raise NumericalError(f"loss is {batch_loss} at epoch {epoch}, batch {batch}")
        grads = {}
        for name in names:
            total = steps[0].grads[name].copy()
            for s in steps[1:]:
                total += s.grads[name]
            grads[name] = total
        check_finite(grads, where=f"epoch {epoch}, batch {batch}")
        if train_cfg.clip_grad_norm is not None:
            clip_grad_norm(grads, train_cfg.clip_grad_norm)
        adam_step(
            result.params.arrays,
            grads,
            result.adam,
            train_cfg.learning_rate,
            train_cfg.beta1,
            train_cfg.beta2,
            train_cfg.eps,
        )
        result.step += 1
        epoch_loss += batch_loss
        positives += sum(s.num_positive for s in steps)
        pruned += sum(s.pruned for s in steps)
        inside += sum(s.inside for s in steps)
        logger.debug("epoch %d batch %d loss %.6f", epoch, batch, batch_loss)
    full = phase == FULL
    return {
        "epoch": epoch,
        "phase": phase,
        "step": result.step,
        "loss": epoch_loss,
        "num_positive": positives if full else None,
        "pruned_fraction": (pruned / inside if inside else 0.0) if full else None,
        "val_map": None,
        "best": False,
    }


@dataclass
class AblationRow:
    label: str
    variant: str
    maps: list[dict[float, float]] = field(default_factory=list)

    def values(self, thresh: float) -> np.ndarray:
        return np.array([m[thresh] for m in self.maps], dtype=np.float64)

    def mean(self, thresh: float) -> float:
        return float(self.values(thresh).mean()) if self.maps else 0.0

    def std(self, thresh: float) -> float:
        return float(self.values(thresh).std()) if self.maps else 0.0


@dataclass
class AblationTable:
    suite: AblationSuite
    thresholds: tuple[float, ...]
    seeds: tuple[int, ...]
    rows: list[AblationRow] = field(default_factory=list)
    training_runs: int = 0

    def row(self, label: str) -> AblationRow:
        for row in self.rows:
            if row.label == label:
                return row
        raise KeyError(label)

    def to_records(self) -> list[dict]:
        return [
            {
                "suite": str(self.suite),
                "variant": row.label,
                "threshold": thresh,
                "mean": row.mean(thresh),
                "std": row.std(thresh),
                "runs": len(row.maps),
            }
            for row in self.rows
            for thresh in self.thresholds
        ]


def run_ablation(
    dataset: Dataset,
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    inference_cfg: InferenceConfig | None,
    suite: AblationSuite | str,
    seeds: Sequence[int],
    thresholds=None,
    params: ModelParams | None = None,
    workers: int | None = None,
) -> AblationTable:
    """Train (or, for fusion, re-score) every variant of ``suite`` once per seed.

    Rows report the validation mAP of each run's selected checkpoint. The
    Frozen pruning row retrains with the regression gate captured at the
    end of the SALAD run of the same seed. With ``params`` the fusion suite
    scores that model instead of training one.
    """
    try:
        suite = AblationSuite(suite)
    except ValueError:
        valid = ", ".join(s.value for s in AblationSuite)
        raise ConfigError(f"unknown ablation suite '{suite}'; valid suites: {valid}") from None
    inference_cfg = inference_cfg or InferenceConfig()
    thresholds = resolve_thresholds(thresholds if thresholds is not None else train_cfg.eval_thresholds)
    _, val_set = dataset.split(train_cfg.val_fraction)
    if not len(val_set):
        raise ConfigError("ablations need a validation split; set train.val_fraction above 0")
    seeds = tuple(seeds) or (train_cfg.seed,)
    table = AblationTable(suite, thresholds, seeds)
    rows = {label: AblationRow(label, str(variant)) for label, variant in ABLATION_ROWS[suite]}
    table.rows = list(rows.values())

    def score(model_params, fusion=None):
        cfg = inference_cfg if fusion is None else inference_cfg.model_copy(update={"fusion": fusion})
        report = evaluate(model_params, val_set, cfg, thresholds)
        return dict(report.mean_ap)

    def fit(seed, **updates):
        table.training_runs += 1
        logger.info("ablation %s: seed %d, %s", suite, seed, updates or "SALAD")
        frozen = updates.pop("frozen_alpha", None)
        capture = updates.pop("capture_alpha", False)
        seed_model = model_cfg.model_copy(update={"seed": seed})
        seed_train = train_cfg.model_copy(update={"seed": seed, **updates})
        return train(
            dataset,
            seed_model,
            seed_train,
            inference_cfg,
            frozen_alpha=frozen,
            capture_alpha=capture,
            workers=workers,
        )

    if suite == AblationSuite.FUSION:
        trained = [params] if params is not None else [
            fit(seed, assignment=SelfAssessVariant.SALAD, pruning=PruningVariant.SALAD).best_params
            for seed in seeds
        ]
        for model_params in trained:
            for label, fusion in ABLATION_ROWS[suite]:
                rows[label].maps.append(score(model_params, fusion))
        return table

    for seed in seeds:
        salad = fit(
            seed,
            assignment=SelfAssessVariant.SALAD,
            pruning=PruningVariant.SALAD,
            capture_alpha=suite == AblationSuite.PRUNING,
        )
        for label, variant in ABLATION_ROWS[suite]:
            if variant == "salad":
                result = salad
            elif suite == AblationSuite.PRUNING:
                extra = {"frozen_alpha": salad.frozen_alpha} if variant == PruningVariant.FROZEN else {}
                result = fit(seed, assignment=SelfAssessVariant.SALAD, pruning=variant, **extra)
            else:
                result = fit(seed, assignment=variant, pruning=PruningVariant.SALAD)
            rows[label].maps.append(score(result.best_params))
    return table
