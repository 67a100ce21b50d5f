"""Iris recognizer: compact conv backbone, stacked adaptive-average-pooling
head (3x3 -> 2x2 -> 1), and a C-way linear classifier.

The pooling head composes three adaptive average pooling stages: two
2-d stages with output sizes 3x3 and 2x2, then a 1-d stage collapsing
the flattened four values to one, leaving one feature per channel.  The
final layer is a plain linear map (identity activation); probabilities
come from softmax at prediction time only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from irisauth.errors import ContractViolation
from irisauth.nn import ops
from irisauth.nn.tensor import ParamSet, Tensor

__all__ = [
    "ClassifierConfig", "build_classifier", "stacked_pool",
    "classifier_forward", "predict", "predict_batch",
]


@dataclass(frozen=True)
class ClassifierConfig:
    """Recognizer structure; defaults target 79 identity classes.

    ``init_gain`` scales the He-uniform bounds: with a normalized-step
    optimizer, smaller weights reorganize proportionally faster under a
    small fixed learning rate.  ``center_inputs`` shifts [0,1] inputs to
    [-0.5, 0.5] inside the forward pass.
    """

    num_classes: int = 79
    input_size: int = 299
    widths: tuple[int, ...] = (16, 32, 64)
    pool_stack: tuple = ((3, 3), (2, 2), 1)
    init_gain: float = 1.0
    center_inputs: bool = False

    def __post_init__(self):
        if self.num_classes < 2:
            raise ContractViolation(
                f"need at least 2 classes, got {self.num_classes}")
        if self.input_size <= 0:
            raise ContractViolation(
                f"input_size must be positive, got {self.input_size}")
        if not self.widths:
            raise ContractViolation("backbone needs at least one block")
        if self.init_gain <= 0:
            raise ContractViolation(
                f"init_gain must be positive, got {self.init_gain}")

    @property
    def feature_width(self) -> int:
        return self.widths[-1]


def build_classifier(cfg: ClassifierConfig, seed: int = 0) -> ParamSet:
    """Seeded He-uniform weights, zero biases; bit-identical per seed."""
    rng = np.random.default_rng(seed)
    params = ParamSet()
    cin = 3
    for i, width in enumerate(cfg.widths):
        fan_in = cin * 9
        bound = cfg.init_gain * np.sqrt(6.0 / fan_in)
        params.add(f"block.{i}.w",
                   rng.uniform(-bound, bound, size=(width, cin, 3, 3)).astype(np.float32))
        params.add(f"block.{i}.b", np.zeros(width, dtype=np.float32))
        cin = width
    bound = cfg.init_gain * np.sqrt(6.0 / cfg.feature_width)
    params.add("head.w",
               rng.uniform(-bound, bound,
                           size=(cfg.num_classes, cfg.feature_width)).astype(np.float32))
    params.add("head.b", np.zeros(cfg.num_classes, dtype=np.float32))
    return params


def stacked_pool(features: Tensor) -> Tensor:
    """Stacked adaptive average pooling: HxW -> 3x3 -> 2x2 -> 1 per channel.

    Accepts [C,H,W] or [N,C,H,W] with H, W >= 3; returns [C] or [N,C].
    """
    squeeze = features.data.ndim == 3
    x = ops.reshape(features, (1,) + features.data.shape) if squeeze else features
    if x.data.ndim != 4:
        raise ContractViolation(
            f"stacked_pool expects [C,H,W] or [N,C,H,W], got {features.data.shape}")
    h, w = x.data.shape[2], x.data.shape[3]
    if h < 3 or w < 3:
        raise ContractViolation(
            f"stacked_pool needs spatial extent >= 3, got {h}x{w}")
    x = ops.adaptive_avg_pool2d(x, 3, 3)
    x = ops.adaptive_avg_pool2d(x, 2, 2)
    n, c = x.data.shape[0], x.data.shape[1]
    x = ops.reshape(x, (n, c, 4))
    x = ops.adaptive_avg_pool1d(x, 1)
    x = ops.reshape(x, (n, c))
    return ops.reshape(x, (c,)) if squeeze else x


def classifier_forward(batch: Tensor, params: ParamSet,
                       cfg: ClassifierConfig) -> Tensor:
    """Logits [N, num_classes] for a batch [N,3,S,S] of normalized crops."""
    if batch.data.ndim != 4 or batch.data.shape[1] != 3:
        raise ContractViolation(
            f"classifier expects [N,3,S,S], got {batch.data.shape}")
    if batch.data.shape[2] != cfg.input_size or batch.data.shape[3] != cfg.input_size:
        raise ContractViolation(
            f"classifier input is {batch.data.shape[2]}x{batch.data.shape[3]}, "
            f"config says {cfg.input_size}")
    x = batch
    if cfg.center_inputs:
        x = ops.add_const(x, -0.5)
    for i in range(len(cfg.widths)):
        x = ops.conv2d(x, params[f"block.{i}.w"], params[f"block.{i}.b"],
                       stride=2, pad=ops.PadMode.SAME)
        x = ops.relu(x)
    x = stacked_pool(x)
    return ops.linear(x, params["head.w"], params["head.b"])


def predict_batch(batch: np.ndarray, params: ParamSet,
                  cfg: ClassifierConfig) -> tuple[np.ndarray, np.ndarray]:
    """(class indices, confidences) for a [N,3,S,S] batch.

    Ties in the logits resolve to the lowest class index, so predictions
    are total and deterministic.
    """
    logits = classifier_forward(Tensor(batch), params, cfg).data
    classes = logits.argmax(axis=1)
    probs = ops.softmax_np(logits, axis=1)
    conf = probs[np.arange(len(classes)), classes]
    return classes.astype(np.int64), conf.astype(np.float64)


def predict(image: np.ndarray, params: ParamSet,
            cfg: ClassifierConfig) -> tuple[int, float]:
    """Class index and softmax confidence for one [3,S,S] input."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3:
        raise ContractViolation(f"predict expects [3,S,S], got {arr.shape}")
    classes, conf = predict_batch(arr[None], params, cfg)
    return int(classes[0]), float(conf[0])
