"""Detector training loop: anchor sampling, multi-task loss, best-epoch
checkpointing, and held-out evaluation."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from irisauth.errors import ContractViolation
from irisauth import datagen
from irisauth.nn import ops
from irisauth.nn.tensor import GradTape, ParamSet, Tensor
from irisauth.optim import Optimizer, OptimHyper, OptState
from irisauth.detect.geometry import (
    Box, encode_deltas_array, generate_anchors, iou, label_anchors,
)
from irisauth.detect.model import (
    DetectorConfig, LossBreakdown, _mask_stack, backbone_forward,
    build_detector, detect_best_region, feature_grid_shape,
    flatten_per_anchor, multi_task_loss, pool_roi, prepare_image,
    rpn_forward,
)

__all__ = [
    "DetectorTrainConfig", "DetectorTrainResult", "train_detector",
    "fit_detector", "fit_detector_arrays", "evaluate_detector",
]


@dataclass(frozen=True)
class DetectorTrainConfig:
    """Protocol knobs for detector training.

    ``train_fraction`` defaults to the 20/80 train/test regime; anchor
    matching thresholds follow the usual RPN convention and per-image
    sampling is 1:1 positives to negatives capped at ``sample_cap``.
    """

    epochs: int = 30
    batch_size: int = 8
    lr: float = 2e-3
    optimizer: str = "amsgrad"
    clip_norm: float | None = None
    pos_thresh: float = 0.7
    neg_thresh: float = 0.3
    sample_cap: int = 32
    mask_rois: int = 4
    train_fraction: float = 0.2
    smooth_l1_beta: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.epochs <= 0 or self.batch_size <= 0:
            raise ContractViolation("epochs and batch_size must be positive")
        if not 0.0 < self.train_fraction < 1.0:
            raise ContractViolation(
                f"train_fraction must lie in (0,1), got {self.train_fraction}")


@dataclass
class DetectorTrainResult:
    """``params`` hold the best-epoch weights; ``final_arrays`` plus
    ``opt_state`` capture the end of training for exact resumption."""

    params: ParamSet
    trace: list[LossBreakdown]
    best_epoch: int
    train_samples: list[datagen.IrisSample] = field(default_factory=list)
    test_samples: list[datagen.IrisSample] = field(default_factory=list)
    final_arrays: dict[str, np.ndarray] = field(default_factory=dict)
    opt_state: "OptState | None" = None


def _resize_mask_to_grid(mask: np.ndarray, box: Box, out: int) -> np.ndarray:
    """Soft occupancy target: crop a binary mask to a box, resample to out x out."""
    h, w = mask.shape
    x0 = min(max(int(np.floor(box.x_min)), 0), w - 1)
    x1 = max(min(int(np.ceil(box.x_max)), w), x0 + 1)
    y0 = min(max(int(np.floor(box.y_min)), 0), h - 1)
    y1 = max(min(int(np.ceil(box.y_max)), h), y0 + 1)
    crop = mask[y0:y1, x0:x1].astype(np.float64)
    rows = (ops.pool_matrix(crop.shape[0], out) if crop.shape[0] >= out
            else ops.interp_matrix(crop.shape[0], out))
    cols = (ops.pool_matrix(crop.shape[1], out) if crop.shape[1] >= out
            else ops.interp_matrix(crop.shape[1], out))
    return np.clip(rows @ crop @ cols.T, 0.0, 1.0).astype(np.float32)


def _sample_anchors(labels, rng: np.random.Generator, cap: int,
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Pick up to cap//2 positives and as many negatives (1:1 when possible)."""
    pos = labels.positive_indices
    neg = labels.negative_indices
    n_pos = min(pos.size, cap // 2)
    if pos.size > n_pos:
        pos = rng.choice(pos, size=n_pos, replace=False)
    n_neg = min(neg.size, max(n_pos, 1), cap - n_pos)
    if neg.size > n_neg:
        neg = rng.choice(neg, size=n_neg, replace=False)
    return np.sort(pos), np.sort(neg)


def train_detector(manifest: datagen.DatasetManifest,
                   split: float,
                   cfg: DetectorConfig,
                   train_cfg: DetectorTrainConfig) -> DetectorTrainResult:
    """Split the manifest, train on the small side, keep the rest as test.

    The manifest must carry ground-truth boxes (and masks for the mask
    term); all images must share one size.  The per-epoch trace holds
    mean loss components, and the returned parameters are the ones from
    the epoch with the lowest total loss.
    """
    train_samples, test_samples = datagen.detector_split(
        manifest, train_fraction=split, seed=train_cfg.seed)
    params, trace, best_epoch, final_arrays, opt_state = fit_detector(
        manifest, train_samples, cfg, train_cfg)
    return DetectorTrainResult(params=params, trace=trace, best_epoch=best_epoch,
                               train_samples=train_samples,
                               test_samples=test_samples,
                               final_arrays=final_arrays, opt_state=opt_state)


def fit_detector(manifest: datagen.DatasetManifest,
                 train_samples: list[datagen.IrisSample],
                 cfg: DetectorConfig,
                 train_cfg: DetectorTrainConfig,
                 ) -> tuple[ParamSet, list[LossBreakdown], int,
                            dict[str, np.ndarray], OptState]:
    """Mini-batch training on the multi-task loss over manifest samples."""
    if not train_samples:
        raise ContractViolation("empty detector training split")
    images, gt_boxes, gt_masks = [], [], []
    for s in train_samples:
        if s.box is None:
            raise ContractViolation(f"sample {s.path} lacks a ground-truth box")
        images.append(datagen.load_image(manifest.image_path(s)))
        gt_boxes.append(Box.from_array(s.box))
        mask_file = manifest.mask_file(s)
        gt_masks.append(datagen.load_mask(mask_file) if mask_file else None)
    return fit_detector_arrays(images, gt_boxes, gt_masks, cfg, train_cfg)


def fit_detector_arrays(raw_images, gt_boxes: list[Box], gt_masks,
                        cfg: DetectorConfig,
                        train_cfg: DetectorTrainConfig,
                        ) -> tuple[ParamSet, list[LossBreakdown], int,
                                   dict[str, np.ndarray], OptState]:
    """Training core over in-memory images ([C,H,W], 0..255 values).

    Returns best-epoch params, the loss trace, the best epoch index, the
    final-epoch parameter arrays, and the optimizer state (the latter two
    allow exact training resumption).
    """
    if not len(raw_images):
        raise ContractViolation("empty detector training split")
    if not (len(raw_images) == len(gt_boxes) == len(gt_masks)):
        raise ContractViolation(
            f"{len(raw_images)} images, {len(gt_boxes)} boxes, "
            f"{len(gt_masks)} masks")
    images = [prepare_image(im) for im in raw_images]
    shapes = {im.shape for im in images}
    if len(shapes) != 1:
        raise ContractViolation(f"training images must share one size, got {shapes}")
    _, img_h, img_w = images[0].shape
    images_arr = np.stack(images)
    n_train = images_arr.shape[0]

    hf, wf = feature_grid_shape(cfg, img_h, img_w)
    anchors = generate_anchors(hf, wf, cfg.anchor)
    per_image = anchors.shape[0]

    # Ground-truth assignment is static per image; precompute once.
    assignments = []
    for i in range(n_train):
        labels = label_anchors(anchors, [gt_boxes[i]],
                               pos_thresh=train_cfg.pos_thresh,
                               neg_thresh=train_cfg.neg_thresh)
        assignments.append(labels)

    params = build_detector(cfg, seed=train_cfg.seed)
    opt = Optimizer(params, OptimHyper(lr=train_cfg.lr),
                    kind=train_cfg.optimizer, clip_norm=train_cfg.clip_norm)

    trace: list[LossBreakdown] = []
    best_epoch = -1
    best_total = np.inf
    best_arrays: dict[str, np.ndarray] = {}

    for epoch in range(train_cfg.epochs):
        order_rng = np.random.default_rng([train_cfg.seed, 0x0D0E, epoch])
        order = order_rng.permutation(n_train)
        sums = np.zeros(3, dtype=np.float64)
        n_batches = 0
        for start in range(0, n_train, train_cfg.batch_size):
            idx = order[start:start + train_cfg.batch_size]
            batch = Tensor(images_arr[idx])
            sample_rng = np.random.default_rng(
                [train_cfg.seed, 0x5A3, epoch, int(idx[0])])

            with GradTape() as tape:
                feats = backbone_forward(batch, params, cfg)
                scores_t, deltas_t = rpn_forward(feats, params, cfg)
                score_rows = flatten_per_anchor(scores_t, 2)
                delta_rows = flatten_per_anchor(deltas_t, 4)

                sel_idx, sel_lbl = [], []
                pos_idx, pos_tgt = [], []
                mask_pool_list, mask_targets = [], []
                for b, img_i in enumerate(idx):
                    labels = assignments[img_i]
                    pos, neg = _sample_anchors(labels, sample_rng,
                                               train_cfg.sample_cap)
                    offset = b * per_image
                    sel_idx.extend((offset + pos).tolist())
                    sel_lbl.extend([1] * pos.size)
                    sel_idx.extend((offset + neg).tolist())
                    sel_lbl.extend([0] * neg.size)
                    if pos.size:
                        pos_idx.extend((offset + pos).tolist())
                        gt_arr = gt_boxes[img_i].as_array()[None].repeat(pos.size, axis=0)
                        pos_tgt.append(encode_deltas_array(anchors[pos], gt_arr))
                        mask = gt_masks[img_i]
                        if mask is not None:
                            for a_i in pos[:train_cfg.mask_rois]:
                                roi = Box.from_array(anchors[a_i])
                                mask_pool_list.append(pool_roi(
                                    feats, b, roi, cfg.anchor.stride, cfg.mask_pool))
                                mask_targets.append(
                                    _resize_mask_to_grid(mask, roi, cfg.mask_size))

                sel_scores = ops.gather_rows(score_rows, np.asarray(sel_idx))
                pos_deltas = (ops.gather_rows(delta_rows, np.asarray(pos_idx))
                              if pos_idx else None)
                mask_logits = None
                if mask_pool_list:
                    mask_logits = _mask_stack(
                        ops.concat_rows(mask_pool_list), params, cfg)
                total, breakdown = multi_task_loss(
                    sel_scores, np.asarray(sel_lbl, dtype=np.int64),
                    pos_deltas,
                    np.concatenate(pos_tgt) if pos_tgt else None,
                    mask_logits,
                    np.stack(mask_targets) if mask_targets else None,
                    smooth_l1_beta=train_cfg.smooth_l1_beta,
                )
                params.zero_grads()
                tape.backward(total, params)
            opt.step()
            sums += (breakdown.l_cls, breakdown.l_box, breakdown.l_mask)
            n_batches += 1
        epoch_loss = LossBreakdown(*(sums / max(n_batches, 1)))
        trace.append(epoch_loss)
        if epoch_loss.total < best_total:
            best_total = epoch_loss.total
            best_epoch = epoch
            best_arrays = {k: v.copy() for k, v in params.arrays().items()}

    final_arrays = {k: v.copy() for k, v in params.arrays().items()}
    params.load_arrays(best_arrays)
    return params, trace, best_epoch, final_arrays, opt.state


def evaluate_detector(params: ParamSet, cfg: DetectorConfig,
                      manifest: datagen.DatasetManifest,
                      samples: list[datagen.IrisSample]) -> dict:
    """Mean IoU and detection success (IoU >= 0.5) over labeled samples."""
    if not samples:
        raise ContractViolation("evaluate_detector needs a nonempty sample list")
    ious = []
    found = 0
    for s in samples:
        image = datagen.load_image(manifest.image_path(s))
        det = detect_best_region(image, params, cfg)
        if det is None or s.box is None:
            ious.append(0.0)
            continue
        found += 1
        ious.append(iou(det.box, Box.from_array(s.box)))
    ious_arr = np.asarray(ious)
    return {
        "mean_iou": float(ious_arr.mean()),
        "success_rate": float((ious_arr >= 0.5).mean()),
        "detected": found,
        "count": len(samples),
    }
