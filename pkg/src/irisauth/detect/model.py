"""Region-proposal detector: compact backbone, RPN heads, mask branch.

The backbone is a stack of stride-2 3x3 conv+relu blocks (stride 4 by
default) feeding a shared 3x3 conv, a 2A-channel objectness head and a
4A-channel delta head.  A small mask branch scores a fixed M x M grid
inside each positive region.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from irisauth.errors import ContractViolation
from irisauth.nn import ops
from irisauth.nn.tensor import ParamSet, Tensor
from irisauth.detect.geometry import (
    AnchorGridConfig, Box, Detection, clip_boxes, decode_deltas_array,
    generate_anchors, nms,
)

__all__ = [
    "DetectorConfig", "LossBreakdown", "build_detector", "backbone_forward",
    "rpn_forward", "mask_head_forward", "multi_task_loss",
    "detect_best_region", "feature_grid_shape", "prepare_image", "pool_roi",
    "flatten_per_anchor",
]


@dataclass(frozen=True)
class DetectorConfig:
    """Structure and inference thresholds of the detector.

    ``block_strides`` defaults to all-2 (overall stride 2^blocks); a
    trailing stride-1 block deepens the receptive field without
    coarsening the anchor grid.
    """

    in_channels: int = 3
    backbone_widths: tuple[int, ...] = (16, 32)
    block_strides: tuple[int, ...] | None = None
    kernel_size: int = 3
    anchor: AnchorGridConfig = field(default_factory=AnchorGridConfig)
    mask_size: int = 14
    mask_pool: int = 7
    nms_iou: float = 0.5
    score_floor: float = 0.05
    pre_nms_limit: int = 200

    def __post_init__(self):
        if not self.backbone_widths:
            raise ContractViolation("backbone needs at least one block")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ContractViolation(
                f"kernel_size must be odd and positive, got {self.kernel_size}")
        if self.block_strides is None:
            object.__setattr__(self, "block_strides",
                               (2,) * len(self.backbone_widths))
        if len(self.block_strides) != len(self.backbone_widths):
            raise ContractViolation(
                f"{len(self.block_strides)} strides for "
                f"{len(self.backbone_widths)} blocks")
        if any(s < 1 for s in self.block_strides):
            raise ContractViolation(f"strides must be >= 1, got {self.block_strides}")
        stride = 1
        for s in self.block_strides:
            stride *= s
        if self.anchor.stride != stride:
            raise ContractViolation(
                f"anchor stride {self.anchor.stride} does not match backbone "
                f"stride {stride} (strides {self.block_strides})")

    @property
    def feature_channels(self) -> int:
        return self.backbone_widths[-1]


@dataclass(frozen=True)
class LossBreakdown:
    """Additive multi-task loss: classification + box + mask terms."""

    l_cls: float
    l_box: float
    l_mask: float
    total: float = None  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "total", self.l_cls + self.l_box + self.l_mask)


def _he_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


def _add_conv(params: ParamSet, rng, name: str, cout: int, cin: int, k: int) -> None:
    params.add(f"{name}.w", _he_uniform(rng, (cout, cin, k, k), cin * k * k))
    params.add(f"{name}.b", np.zeros(cout, dtype=np.float32))


def build_detector(cfg: DetectorConfig, seed: int = 0) -> ParamSet:
    """Seeded He-uniform initialization of all detector parameters."""
    rng = np.random.default_rng(seed)
    params = ParamSet()
    cin = cfg.in_channels
    for i, width in enumerate(cfg.backbone_widths):
        _add_conv(params, rng, f"backbone.{i}", width, cin, cfg.kernel_size)
        cin = width
    a = cfg.anchor.anchors_per_cell
    _add_conv(params, rng, "rpn.shared", cfg.feature_channels, cin, 3)
    _add_conv(params, rng, "rpn.score", 2 * a, cfg.feature_channels, 1)
    _add_conv(params, rng, "rpn.delta", 4 * a, cfg.feature_channels, 1)
    _add_conv(params, rng, "mask.conv", cfg.feature_channels, cfg.feature_channels, 3)
    _add_conv(params, rng, "mask.out", 1, cfg.feature_channels, 1)
    return params


def feature_grid_shape(cfg: DetectorConfig, height: int, width: int) -> tuple[int, int]:
    """Spatial extent of the backbone output for a given input size."""
    h, w = height, width
    for s in cfg.block_strides:
        h = -(-h // s)
        w = -(-w // s)
    return h, w


def backbone_forward(images: Tensor, params: ParamSet, cfg: DetectorConfig) -> Tensor:
    """Downsampling conv+relu blocks; images are [N,C,H,W]."""
    if images.data.ndim != 4 or images.data.shape[1] != cfg.in_channels:
        raise ContractViolation(
            f"backbone expects [N,{cfg.in_channels},H,W], got {images.data.shape}")
    x = images
    for i, stride in enumerate(cfg.block_strides):
        x = ops.conv2d(x, params[f"backbone.{i}.w"], params[f"backbone.{i}.b"],
                       stride=stride, pad=ops.PadMode.SAME)
        x = ops.relu(x)
    return x


def rpn_forward(features: Tensor, params: ParamSet,
                cfg: DetectorConfig) -> tuple[Tensor, Tensor]:
    """Shared 3x3 conv + relu, then parallel 1x1 score and delta heads.

    Returns per-anchor logits: scores [N,2A,H,W] (background/foreground
    pairs) and deltas [N,4A,H,W].
    """
    a = cfg.anchor.anchors_per_cell
    if features.data.shape[1] != params["rpn.shared.w"].data.shape[1]:
        raise ContractViolation(
            f"rpn features have {features.data.shape[1]} channels, "
            f"params expect {params['rpn.shared.w'].data.shape[1]}")
    shared = ops.relu(ops.conv2d(features, params["rpn.shared.w"],
                                 params["rpn.shared.b"], stride=1,
                                 pad=ops.PadMode.SAME))
    scores = ops.conv2d(shared, params["rpn.score.w"], params["rpn.score.b"],
                        stride=1, pad=ops.PadMode.SAME)
    deltas = ops.conv2d(shared, params["rpn.delta.w"], params["rpn.delta.b"],
                        stride=1, pad=ops.PadMode.SAME)
    if scores.data.shape[1] != 2 * a or deltas.data.shape[1] != 4 * a:
        raise ContractViolation(
            f"head channels ({scores.data.shape[1]}, {deltas.data.shape[1]}) "
            f"inconsistent with A={a}")
    return scores, deltas


def flatten_per_anchor(t: Tensor, per_anchor: int) -> Tensor:
    """[N, A*k, H, W] -> [N*H*W*A, k] matching anchor list ordering."""
    n, c, h, w = t.data.shape
    a = c // per_anchor
    x = ops.reshape(t, (n, a, per_anchor, h, w))
    x = ops.transpose(x, (0, 3, 4, 1, 2))
    return ops.reshape(x, (n * h * w * a, per_anchor))


def _mask_stack(pooled: Tensor, params: ParamSet, cfg: DetectorConfig) -> Tensor:
    """Shared mask-branch convs on pooled crops [P,C,p,p] -> [P,M,M] logits."""
    x = ops.relu(ops.conv2d(pooled, params["mask.conv.w"], params["mask.conv.b"],
                            stride=1, pad=ops.PadMode.SAME))
    x = ops.conv2d(x, params["mask.out.w"], params["mask.out.b"],
                   stride=1, pad=ops.PadMode.SAME)
    x = ops.upsample_bilinear(x, cfg.mask_size, cfg.mask_size)
    p = x.data.shape[0]
    return ops.reshape(x, (p, cfg.mask_size, cfg.mask_size))


def mask_head_forward(feature_crop: Tensor, params: ParamSet,
                      cfg: DetectorConfig) -> Tensor:
    """Mask logits for one cropped feature window.

    Accepts [C,h,w] or [1,C,h,w]; pools to (mask_pool x mask_pool), runs
    the shared conv stack, and upsamples to (mask_size x mask_size).
    """
    data = feature_crop
    if data.data.ndim == 3:
        data = ops.reshape(data, (1,) + data.data.shape)
    if data.data.ndim != 4 or data.data.size == 0:
        raise ContractViolation(
            f"mask head expects a nonempty [1,C,h,w] crop, got {feature_crop.data.shape}")
    pooled = ops.adaptive_avg_pool2d(data, min(cfg.mask_pool, data.data.shape[2]),
                                     min(cfg.mask_pool, data.data.shape[3]))
    if pooled.data.shape[2:] != (cfg.mask_pool, cfg.mask_pool):
        pooled = ops.upsample_bilinear(pooled, cfg.mask_pool, cfg.mask_pool)
    logits = _mask_stack(pooled, params, cfg)
    return ops.reshape(logits, (cfg.mask_size, cfg.mask_size))


def pool_roi(features: Tensor, n: int, box, stride: int, out: int) -> Tensor:
    """Crop the feature map under a pixel-space box and pool to out x out.

    Feature cells are stride x stride pixel blocks; the crop covers every
    cell the box touches.  Crops smaller than ``out`` are bilinearly
    expanded so the pooled window is always out x out.
    """
    hf, wf = features.data.shape[2], features.data.shape[3]
    x0, y0, x1, y1 = (float(v) for v in (box.as_array() if isinstance(box, Box) else box))
    left = min(max(int(np.floor(x0 / stride)), 0), wf - 1)
    right = max(min(int(np.ceil(x1 / stride)), wf), left + 1)
    top = min(max(int(np.floor(y0 / stride)), 0), hf - 1)
    bottom = max(min(int(np.ceil(y1 / stride)), hf), top + 1)
    crop = ops.roi_crop(features, n, top, bottom, left, right)
    pooled = ops.adaptive_avg_pool2d(crop, min(out, crop.data.shape[2]),
                                     min(out, crop.data.shape[3]))
    if pooled.data.shape[2:] != (out, out):
        pooled = ops.upsample_bilinear(pooled, out, out)
    return pooled


def multi_task_loss(scores: Tensor | None, anchor_labels: np.ndarray | None,
                    deltas: Tensor | None, target_deltas: np.ndarray | None,
                    mask_logits: Tensor | None, mask_targets: np.ndarray | None,
                    smooth_l1_beta: float = 1.0,
                    ) -> tuple[Tensor, LossBreakdown]:
    """Additive loss over sampled anchors: cls + box + mask.

    ``scores`` are [k,2] background/foreground logits for the sampled
    anchors with ``anchor_labels`` in {0,1}; ``deltas`` are [p,4]
    predictions for positive anchors against ``target_deltas``;
    ``mask_logits`` are [p,M,M] against soft targets.  Any term may be
    None/empty and then contributes exactly 0.
    """
    terms: list[Tensor] = []
    parts = []
    for pred, tgt, kind in ((scores, anchor_labels, "cls"),
                            (deltas, target_deltas, "box"),
                            (mask_logits, mask_targets, "mask")):
        if pred is None or tgt is None or pred.data.shape[0] == 0:
            parts.append(0.0)
            continue
        if kind == "cls":
            term = ops.cross_entropy(pred, np.asarray(tgt, dtype=np.int64))
        elif kind == "box":
            term = ops.smooth_l1(pred, Tensor(np.asarray(tgt, dtype=np.float32)),
                                 beta=smooth_l1_beta)
        else:
            term = ops.binary_cross_entropy_with_logits(
                pred, Tensor(np.asarray(tgt, dtype=np.float32)))
        terms.append(term)
        parts.append(float(term.data))
    if terms:
        total = terms[0]
        for term in terms[1:]:
            total = ops.add(total, term)
    else:
        total = Tensor(np.float32(0.0))
    return total, LossBreakdown(l_cls=parts[0], l_box=parts[1], l_mask=parts[2])


def prepare_image(image: np.ndarray) -> np.ndarray:
    """[C,H,W] image with 0..255 values -> 3-channel float32 in [0,1].

    Grey inputs are stacked to three identical channels so a single
    detector serves both capture spectra.
    """
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim != 3:
        raise ContractViolation(f"expected [C,H,W] image, got shape {arr.shape}")
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    return np.ascontiguousarray(arr / 255.0)


def detect_best_region(image: Tensor | np.ndarray, params: ParamSet,
                       cfg: DetectorConfig) -> Detection | None:
    """Highest-objectness detection on one image, or None when nothing
    clears ``cfg.score_floor`` (the explicit no-iris outcome).

    ``image`` is [C,H,W] with 0..255 values as produced by the loaders.
    Pipeline: backbone -> RPN -> decode every anchor -> clip to the image
    -> drop degenerate boxes -> NMS -> winner, plus its mask grid.
    """
    raw = image.data if isinstance(image, Tensor) else np.asarray(image, dtype=np.float32)
    data = prepare_image(raw)
    x = Tensor(data[None])
    feats = backbone_forward(x, params, cfg)
    scores_t, deltas_t = rpn_forward(feats, params, cfg)

    n, _, hf, wf = feats.data.shape
    anchors = generate_anchors(hf, wf, cfg.anchor)
    score_pairs = flatten_per_anchor(scores_t, 2).data.astype(np.float64)
    # Rank on the raw fg-vs-bg logit margin: the probability saturates to
    # exactly 1.0 in float32 long before the margin stops discriminating.
    margin = score_pairs[:, 1] - score_pairs[:, 0]
    fg = 1.0 / (1.0 + np.exp(-margin))
    deltas = flatten_per_anchor(deltas_t, 4).data.astype(np.float64)

    boxes = decode_deltas_array(anchors, deltas)
    boxes = clip_boxes(boxes, width=data.shape[2], height=data.shape[1])
    widths = boxes[:, 2] - boxes[:, 0]
    heights = boxes[:, 3] - boxes[:, 1]
    valid = (widths > 0) & (heights > 0) & (fg >= cfg.score_floor)
    idx = np.flatnonzero(valid)
    if idx.size == 0:
        return None
    order = np.argsort(-margin[idx], kind="stable")
    idx = idx[order[:cfg.pre_nms_limit]]
    candidates = [Detection(Box.from_array(boxes[i]), float(fg[i])) for i in idx]
    kept = nms(candidates, cfg.nms_iou)
    best = kept[0]

    pooled = pool_roi(feats, 0, best.box, cfg.anchor.stride, cfg.mask_pool)
    mask_logits = _mask_stack(pooled, params, cfg).data[0]
    mask = 1.0 / (1.0 + np.exp(-mask_logits.astype(np.float64)))
    return replace(best, mask=mask.astype(np.float32))
