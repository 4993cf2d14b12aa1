# salad is distributed under the terms of the BSD 3-clause license.
# Consult LICENSE.txt or http://opensource.org/licenses/BSD-3-Clause.
"""
Bidirectional GRU encoder with regression, scoring and classification heads.

Parameters live in plain numpy arrays (``ModelParams``). A forward pass
wraps them in fresh leaf tensors, so independent videos can be processed on
separate threads, each with its own graph and gradients.

Parameter naming::

    gru_fwd.W_z  gru_fwd.W_r  gru_fwd.W_n    (feature_dim, hidden_dim)
    gru_fwd.U_z  gru_fwd.U_r  gru_fwd.U_n    (hidden_dim, hidden_dim)
    gru_fwd.b_z  gru_fwd.b_r  gru_fwd.b_n    (hidden_dim,)
    gru_bwd.*                                same shapes, right-to-left cell
    reg.{0..3}.weight / .bias                2H -> w1 -> w2 -> w2 -> 2
    score.{0..3}.weight / .bias              2H -> w1 -> w2 -> w2 -> 1
    cls.{0..2}.weight / .bias                2H -> w1 -> w2 -> num_classes + 1
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .assignment import FramePrediction
from .autodiff import Tensor, concat, custom_op, relu, sigmoid, softmax, stable_sigmoid
from .exceptions import ShapeError
from .intervals import Interval

if TYPE_CHECKING:
    from collections.abc import Iterator, Mapping

    from ._schema import ModelConfig

logger = logging.getLogger(__name__)

DIRECTIONS = ("gru_fwd", "gru_bwd")
GATES = ("z", "r", "n")
REGRESSION_PREFIX = "reg"
SCORING_PREFIX = "score"
CLASSIFICATION_PREFIX = "cls"


def _head_dims(cfg: ModelConfig) -> dict[str, list[int]]:
    width_in = 2 * cfg.hidden_dim
    w1, w2 = cfg.head_widths
    return {
        REGRESSION_PREFIX: [width_in, w1, w2, w2, 2],
        SCORING_PREFIX: [width_in, w1, w2, w2, 1],
        CLASSIFICATION_PREFIX: [width_in, w1, w2, cfg.num_classes + 1],
    }


def parameter_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape of every parameter, in a fixed order. Allocates nothing."""
    d, h = cfg.feature_dim, cfg.hidden_dim
    shapes = {}
    for direction in DIRECTIONS:
        for gate in GATES:
            shapes[f"{direction}.W_{gate}"] = (d, h)
        for gate in GATES:
            shapes[f"{direction}.U_{gate}"] = (h, h)
        for gate in GATES:
            shapes[f"{direction}.b_{gate}"] = (h,)
    for prefix, dims in _head_dims(cfg).items():
        for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
            shapes[f"{prefix}.{layer}.weight"] = (fan_in, fan_out)
            shapes[f"{prefix}.{layer}.bias"] = (fan_out,)
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    return sum(math.prod(shape) for shape in parameter_shapes(cfg).values())


def _fan_in(name: str, cfg: ModelConfig, shape: tuple[int, ...]) -> int:
    if name.startswith(DIRECTIONS):
        return cfg.feature_dim if ".W_" in name else cfg.hidden_dim
    if name.endswith(".bias"):
        # a bias shares the bound of its weight matrix
        return parameter_shapes(cfg)[name[: -len("bias")] + "weight"][0]
    return shape[0]


def is_head_parameter(name: str, *prefixes: str) -> bool:
    return name.split(".", 1)[0] in prefixes


class ModelParams:
    """Named parameter arrays for one model configuration."""

    def __init__(self, config: ModelConfig, arrays: Mapping[str, np.ndarray]):
        self.config = config
        expected = parameter_shapes(config)
        offenders = []
        for name, shape in expected.items():
            if name not in arrays:
                offenders.append(f"{name}: missing")
            elif tuple(np.shape(arrays[name])) != shape:
                offenders.append(f"{name}: got {tuple(np.shape(arrays[name]))}, expected {shape}")
        offenders.extend(f"{name}: unexpected" for name in arrays if name not in expected)
        if offenders:
            raise ShapeError("parameter set does not match the model config: " + "; ".join(offenders))
        dtype = np.dtype(config.dtype)
        self.arrays = {name: np.array(arrays[name], dtype=dtype) for name in expected}

    @classmethod
    def initialize(cls, config: ModelConfig) -> ModelParams:
        """Uniform in +-1/sqrt(fan_in) per layer, drawn in parameter order from ``config.seed``."""
        rng = np.random.default_rng(config.seed)
        arrays = {}
        for name, shape in parameter_shapes(config).items():
            bound = 1.0 / math.sqrt(_fan_in(name, config, shape))
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        logger.debug("initialized %d parameters (seed %d)", parameter_count(config), config.seed)
        return cls(config, arrays)

    @classmethod
    def zeros(cls, config: ModelConfig) -> ModelParams:
        return cls(config, {n: np.zeros(s) for n, s in parameter_shapes(config).items()})

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.arrays)

    def __len__(self):
        return len(self.arrays)

    def names(self) -> list[str]:
        return list(self.arrays)

    def copy(self) -> ModelParams:
        return ModelParams(self.config, self.arrays)

    def astype(self, dtype: str) -> ModelParams:
        return ModelParams(self.config.model_copy(update={"dtype": dtype}), self.arrays)

    def as_tensors(self, requires_grad: bool = True) -> dict[str, Tensor]:
        return {
            name: Tensor(array, requires_grad=requires_grad, name=name)
            for name, array in self.arrays.items()
        }


@dataclass
class ModelOutput:
    offsets: Tensor
    "(T, 2) normalized start/end offsets in [0, 1]."
    p_hat: Tensor
    "(T,) self-assessment scores."
    class_probs: Tensor
    "(T, num_classes + 1) class distribution, background at index 0."

    @property
    def num_frames(self) -> int:
        return self.p_hat.shape[0]


def gru_sequence(x: Tensor, weights: Mapping[str, Tensor], prefix: str, reverse=False) -> Tensor:
    """Run one GRU direction over ``x`` (T, D) and return every hidden state (T, H).

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    n = tanh(x W_n + (r * h) U_n + b_n)
    h' = (1 - z) * h + z * n

    The initial state is zero. With ``reverse`` the sequence is consumed
    right to left and the states are returned in the original frame order.
    """
    parents = [x] + [weights[f"{prefix}.{kind}_{gate}"] for kind in "WUb" for gate in GATES]
    W_z, W_r, W_n, U_z, U_r, U_n, b_z, b_r, b_n = (p.data for p in parents[1:])
    hidden = U_z.shape[0]
    xs = x.data[::-1] if reverse else x.data
    n_frames = xs.shape[0]
    dtype = xs.dtype

    w_cat = np.concatenate([W_z, W_r, W_n], axis=1)
    gx = xs @ w_cat + np.concatenate([b_z, b_r, b_n])
    states = np.zeros((n_frames + 1, hidden), dtype=dtype)
    z_all = np.empty((n_frames, hidden), dtype=dtype)
    r_all = np.empty_like(z_all)
    n_all = np.empty_like(z_all)
    rh_all = np.empty_like(z_all)
    for t in range(n_frames):
        h = states[t]
        z = stable_sigmoid(gx[t, :hidden] + h @ U_z)
        r = stable_sigmoid(gx[t, hidden : 2 * hidden] + h @ U_r)
        rh = r * h
        n = np.tanh(gx[t, 2 * hidden :] + rh @ U_n)
        states[t + 1] = (1.0 - z) * h + z * n
        z_all[t], r_all[t], n_all[t], rh_all[t] = z, r, n, rh
    out = states[1:]

    def vjp(grad_out):
        g_seq = grad_out[::-1] if reverse else grad_out
        d_gx = np.zeros((n_frames, 3 * hidden), dtype=dtype)
        dU = {gate: np.zeros((hidden, hidden), dtype=dtype) for gate in GATES}
        dh_next = np.zeros(hidden, dtype=dtype)
        for t in range(n_frames - 1, -1, -1):
            h_prev = states[t]
            z, r, n = z_all[t], r_all[t], n_all[t]
            dh = g_seq[t] + dh_next
            da_n = dh * z * (1.0 - n * n)
            da_z = dh * (n - h_prev) * z * (1.0 - z)
            d_rh = da_n @ U_n.T
            da_r = d_rh * h_prev * r * (1.0 - r)
            dU["n"] += np.outer(rh_all[t], da_n)
            dU["z"] += np.outer(h_prev, da_z)
            dU["r"] += np.outer(h_prev, da_r)
            dh_next = dh * (1.0 - z) + d_rh * r + da_z @ U_z.T + da_r @ U_r.T
            d_gx[t, :hidden] = da_z
            d_gx[t, hidden : 2 * hidden] = da_r
            d_gx[t, 2 * hidden :] = da_n
        d_w = xs.T @ d_gx
        d_b = d_gx.sum(axis=0)
        d_x = d_gx @ w_cat.T
        if reverse:
            d_x = d_x[::-1]
        split = (slice(0, hidden), slice(hidden, 2 * hidden), slice(2 * hidden, 3 * hidden))
        return (
            d_x,
            *(d_w[:, s] for s in split),
            dU["z"],
            dU["r"],
            dU["n"],
            *(d_b[s] for s in split),
        )

    result = out[::-1].copy() if reverse else out
    return custom_op(result, parents, vjp, f"gru[{prefix}]")


def _head(h: Tensor, weights: Mapping[str, Tensor], prefix: str, n_layers: int) -> Tensor:
    for layer in range(n_layers):
        h = h @ weights[f"{prefix}.{layer}.weight"] + weights[f"{prefix}.{layer}.bias"]
        if layer < n_layers - 1:
            h = relu(h)
    return h


def forward(features, params: ModelParams | Mapping[str, Tensor], config: ModelConfig | None = None) -> ModelOutput:
    """Per-frame offsets, self-assessment scores and class distributions for one video.

    ``params`` is either a ``ModelParams`` (evaluated without recording a
    graph) or the tensors returned by ``ModelParams.as_tensors``.
    """
    if isinstance(params, ModelParams):
        config = params.config
        weights = params.as_tensors(requires_grad=False)
    else:
        if config is None:
            raise ShapeError("forward() needs the model config when given raw tensors")
        weights = params
    dtype = weights[f"{DIRECTIONS[0]}.W_z"].dtype
    data = features.data if isinstance(features, Tensor) else np.asarray(features)
    if data.ndim != 2:
        raise ShapeError(f"features must be a (T, D) matrix, got shape {data.shape}")
    if data.shape[0] < 1:
        raise ShapeError("features must contain at least one frame")
    if data.shape[1] != config.feature_dim:
        raise ShapeError(
            f"features have dimension {data.shape[1]}, the model expects {config.feature_dim}"
        )
    x = features if isinstance(features, Tensor) else Tensor(data.astype(dtype, copy=False))

    hidden = concat(
        [
            gru_sequence(x, weights, DIRECTIONS[0]),
            gru_sequence(x, weights, DIRECTIONS[1], reverse=True),
        ],
        axis=1,
    )
    dims = _head_dims(config)
    offsets = sigmoid(_head(hidden, weights, REGRESSION_PREFIX, len(dims[REGRESSION_PREFIX]) - 1))
    score = sigmoid(_head(hidden, weights, SCORING_PREFIX, len(dims[SCORING_PREFIX]) - 1))
    logits = _head(hidden, weights, CLASSIFICATION_PREFIX, len(dims[CLASSIFICATION_PREFIX]) - 1)
    return ModelOutput(
        offsets=offsets,
        p_hat=score.reshape(-1),
        class_probs=softmax(logits, axis=1),
    )


def anchor_times(num_frames: int, frame_rate: float) -> np.ndarray:
    """Frame centers in seconds."""
    return (np.arange(num_frames, dtype=np.float64) + 0.5) / frame_rate


def to_frame_predictions(output: ModelOutput, anchors: np.ndarray, scale: float) -> list[FramePrediction]:
    offsets = output.offsets.data.astype(np.float64)
    p_hat = output.p_hat.data.astype(np.float64)
    probs = output.class_probs.data.astype(np.float64)
    probs = probs / probs.sum(axis=1, keepdims=True)
    preds = []
    for t, anchor in enumerate(anchors):
        anchor = float(anchor)
        interval = Interval(anchor - offsets[t, 0] * scale, anchor + offsets[t, 1] * scale)
        preds.append(FramePrediction(anchor, interval, p_hat[t], tuple(probs[t])))
    return preds
