"""Anchor geometry: grids, IoU, ground-truth labeling, delta coding, NMS.

Everything here is pure array math over axis-aligned boxes in pixel
coordinates (x_min, y_min, x_max, y_max); nothing touches the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from irisauth.errors import ContractViolation

__all__ = [
    "Box", "Detection", "AnchorGridConfig", "AnchorLabels", "Delta4",
    "generate_anchors", "iou", "iou_matrix", "label_anchors",
    "encode_deltas", "decode_deltas", "nms", "clip_boxes",
]

POSITIVE, NEGATIVE, IGNORE = 1, 0, -1

# log size ratios beyond this decode to astronomically wrong boxes; the
# clamp keeps exp() finite for untrained heads emitting junk.
_MAX_LOG_RATIO = 10.0


@dataclass(frozen=True)
class Box:
    """Axis-aligned rectangle; x_min <= x_max and y_min <= y_max."""

    x_min: float
    y_min: float
    x_max: float
    y_max: float

    def __post_init__(self):
        if self.x_min > self.x_max or self.y_min > self.y_max:
            raise ContractViolation(
                f"inverted box ({self.x_min},{self.y_min},{self.x_max},{self.y_max})")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def as_array(self) -> np.ndarray:
        return np.array([self.x_min, self.y_min, self.x_max, self.y_max],
                        dtype=np.float64)

    @classmethod
    def from_array(cls, arr) -> "Box":
        x0, y0, x1, y1 = (float(v) for v in arr)
        return cls(x0, y0, x1, y1)


@dataclass(frozen=True)
class Delta4:
    """Dimensionless box regression target (dx, dy, dw, dh)."""

    dx: float
    dy: float
    dw: float
    dh: float

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dw, self.dh], dtype=np.float64)


@dataclass(frozen=True)
class Detection:
    """One scored region: box, foreground probability, optional mask grid."""

    box: Box
    objectness: float
    mask: np.ndarray | None = None

    def __post_init__(self):
        if not 0.0 <= self.objectness <= 1.0:
            raise ContractViolation(
                f"objectness must lie in [0,1], got {self.objectness}")


@dataclass(frozen=True)
class AnchorGridConfig:
    """Anchor tiling: one anchor per (cell, scale, ratio) combination."""

    stride: int = 4
    scales: tuple[float, ...] = (1.0, 2.0, 4.0)
    ratios: tuple[float, ...] = (0.5, 1.0, 2.0)
    base_size: float | None = None  # defaults to stride

    def __post_init__(self):
        if self.stride <= 0:
            raise ContractViolation(f"stride must be positive, got {self.stride}")
        if not self.scales or any(s <= 0 for s in self.scales):
            raise ContractViolation(f"scales must be positive, got {self.scales}")
        if not self.ratios or any(r <= 0 for r in self.ratios):
            raise ContractViolation(f"ratios must be positive, got {self.ratios}")
        if self.base_size is not None and self.base_size <= 0:
            raise ContractViolation(
                f"base_size must be positive, got {self.base_size}")

    @property
    def anchors_per_cell(self) -> int:
        return len(self.scales) * len(self.ratios)

    @property
    def base(self) -> float:
        return float(self.base_size if self.base_size is not None else self.stride)


@dataclass
class AnchorLabels:
    """Per-anchor assignment: 1 positive / 0 negative / -1 ignore.

    ``matched_gt`` holds the ground-truth index for positives, -1 elsewhere.
    """

    labels: np.ndarray
    matched_gt: np.ndarray

    @property
    def positive_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == POSITIVE)

    @property
    def negative_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels == NEGATIVE)


def generate_anchors(grid_h: int, grid_w: int, cfg: AnchorGridConfig) -> np.ndarray:
    """All anchors for a grid, ordered row-major, then scale, then ratio.

    Anchor (i, j, s, r) is centered at ((j+0.5)*stride, (i+0.5)*stride)
    with width base*scale*sqrt(ratio) and height base*scale/sqrt(ratio).
    Returns float64 [grid_h*grid_w*A, 4].
    """
    if grid_h <= 0 or grid_w <= 0:
        raise ContractViolation(
            f"grid extents must be positive, got {grid_h}x{grid_w}")
    scales = np.asarray(cfg.scales, dtype=np.float64)
    ratios = np.asarray(cfg.ratios, dtype=np.float64)
    # Per-cell shapes in (scale-major, ratio-minor) order.
    ws = (cfg.base * scales[:, None] * np.sqrt(ratios)[None, :]).reshape(-1)
    hs = (cfg.base * scales[:, None] / np.sqrt(ratios)[None, :]).reshape(-1)

    cy = (np.arange(grid_h, dtype=np.float64) + 0.5) * cfg.stride
    cx = (np.arange(grid_w, dtype=np.float64) + 0.5) * cfg.stride
    cyy, cxx = np.meshgrid(cy, cx, indexing="ij")
    centers_x = np.repeat(cxx.reshape(-1), ws.size)
    centers_y = np.repeat(cyy.reshape(-1), ws.size)
    all_w = np.tile(ws, grid_h * grid_w)
    all_h = np.tile(hs, grid_h * grid_w)
    return np.stack([
        centers_x - all_w / 2.0,
        centers_y - all_h / 2.0,
        centers_x + all_w / 2.0,
        centers_y + all_h / 2.0,
    ], axis=1)


def iou_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise IoU between box arrays [N,4] and [M,4] -> [N,M]."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4)
    ix0 = np.maximum(a[:, None, 0], b[None, :, 0])
    iy0 = np.maximum(a[:, None, 1], b[None, :, 1])
    ix1 = np.minimum(a[:, None, 2], b[None, :, 2])
    iy1 = np.minimum(a[:, None, 3], b[None, :, 3])
    inter = np.clip(ix1 - ix0, 0.0, None) * np.clip(iy1 - iy0, 0.0, None)
    area_a = (a[:, 2] - a[:, 0]) * (a[:, 3] - a[:, 1])
    area_b = (b[:, 2] - b[:, 0]) * (b[:, 3] - b[:, 1])
    union = area_a[:, None] + area_b[None, :] - inter
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(union > 0.0, inter / union, 0.0)
    return out


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two boxes; 0 when the union is empty."""
    return float(iou_matrix(a.as_array()[None], b.as_array()[None])[0, 0])


def label_anchors(anchors: np.ndarray, gt_boxes, pos_thresh: float = 0.7,
                  neg_thresh: float = 0.3) -> AnchorLabels:
    """Assign positive/negative/ignore labels against ground-truth boxes.

    Positive when max IoU >= pos_thresh, negative when < neg_thresh,
    ignore in between.  The best anchor for each ground truth is forced
    positive so every target owns at least one positive anchor.
    """
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    if anchors.shape[0] == 0:
        raise ContractViolation("label_anchors requires a nonempty anchor list")
    if not 0.0 <= neg_thresh <= pos_thresh <= 1.0:
        raise ContractViolation(
            f"need 0 <= neg_thresh <= pos_thresh <= 1, got "
            f"neg={neg_thresh}, pos={pos_thresh}")
    gt = np.stack([
        g.as_array() if isinstance(g, Box) else np.asarray(g, dtype=np.float64)
        for g in gt_boxes
    ]) if len(gt_boxes) else np.zeros((0, 4))

    n = anchors.shape[0]
    labels = np.full(n, NEGATIVE, dtype=np.int8)
    matched = np.full(n, -1, dtype=np.int64)
    if gt.shape[0] == 0:
        return AnchorLabels(labels, matched)

    overlaps = iou_matrix(anchors, gt)
    best_gt = overlaps.argmax(axis=1)
    best_iou = overlaps[np.arange(n), best_gt]

    labels[best_iou >= neg_thresh] = IGNORE
    pos = best_iou >= pos_thresh
    labels[pos] = POSITIVE
    matched[pos] = best_gt[pos]
    # Forced match: the highest-IoU anchor per ground truth (lowest index
    # on ties).  Anchors claimed by an earlier target are excluded so
    # overlapping targets cannot steal each other's only positive.
    forced_taken = np.zeros(n, dtype=bool)
    for j in range(gt.shape[0]):
        if forced_taken.all():  # more targets than anchors: nothing left
            break
        scores = np.where(forced_taken, -1.0, overlaps[:, j])
        k = int(scores.argmax())
        forced_taken[k] = True
        labels[k] = POSITIVE
        matched[k] = j
    return AnchorLabels(labels, matched)


def _center_form(boxes: np.ndarray) -> tuple[np.ndarray, ...]:
    w = boxes[:, 2] - boxes[:, 0]
    h = boxes[:, 3] - boxes[:, 1]
    cx = boxes[:, 0] + w / 2.0
    cy = boxes[:, 1] + h / 2.0
    return cx, cy, w, h


def encode_deltas_array(anchors: np.ndarray, gts: np.ndarray) -> np.ndarray:
    """Vectorized delta encoding; anchors and gts are aligned [K,4]."""
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 4)
    acx, acy, aw, ah = _center_form(anchors)
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ContractViolation("encode_deltas requires anchors with positive extent")
    gcx, gcy, gw, gh = _center_form(gts)
    return np.stack([
        (gcx - acx) / aw,
        (gcy - acy) / ah,
        np.log(gw / aw),
        np.log(gh / ah),
    ], axis=1)


def decode_deltas_array(anchors: np.ndarray, deltas: np.ndarray) -> np.ndarray:
    """Exact inverse of :func:`encode_deltas_array` (log ratios clamped
    to +/-10 so garbage predictions cannot overflow exp)."""
    anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 4)
    deltas = np.asarray(deltas, dtype=np.float64).reshape(-1, 4)
    acx, acy, aw, ah = _center_form(anchors)
    if np.any(aw <= 0) or np.any(ah <= 0):
        raise ContractViolation("decode_deltas requires anchors with positive extent")
    cx = acx + deltas[:, 0] * aw
    cy = acy + deltas[:, 1] * ah
    w = aw * np.exp(np.clip(deltas[:, 2], -_MAX_LOG_RATIO, _MAX_LOG_RATIO))
    h = ah * np.exp(np.clip(deltas[:, 3], -_MAX_LOG_RATIO, _MAX_LOG_RATIO))
    return np.stack([cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0], axis=1)


def encode_deltas(anchor: Box, gt: Box) -> Delta4:
    d = encode_deltas_array(anchor.as_array()[None], gt.as_array()[None])[0]
    return Delta4(*(float(v) for v in d))


def decode_deltas(anchor: Box, d: Delta4) -> Box:
    out = decode_deltas_array(anchor.as_array()[None], d.as_array()[None])[0]
    return Box.from_array(out)


def clip_boxes(boxes: np.ndarray, width: float, height: float) -> np.ndarray:
    """Clamp box coordinates to the image rectangle [0,width]x[0,height]."""
    boxes = np.asarray(boxes, dtype=np.float64).reshape(-1, 4).copy()
    boxes[:, 0::2] = np.clip(boxes[:, 0::2], 0.0, width)
    boxes[:, 1::2] = np.clip(boxes[:, 1::2], 0.0, height)
    return boxes


def nms(detections: list[Detection], iou_thresh: float = 0.5) -> list[Detection]:
    """Greedy non-maximum suppression, highest objectness first.

    Ties in score break on input position, so the result is stable and
    deterministic.  Kept boxes never overlap each other above the threshold.
    """
    if not detections:
        return []
    order = sorted(range(len(detections)),
                   key=lambda i: (-detections[i].objectness, i))
    boxes = np.stack([detections[i].box.as_array() for i in order])
    suppressed = np.zeros(len(order), dtype=bool)
    kept: list[Detection] = []
    for pos in range(len(order)):
        if suppressed[pos]:
            continue
        kept.append(detections[order[pos]])
        rest = np.flatnonzero(~suppressed[pos + 1:]) + pos + 1
        if rest.size:
            ious = iou_matrix(boxes[pos][None], boxes[rest])[0]
            suppressed[rest[ious > iou_thresh]] = True
    return kept
