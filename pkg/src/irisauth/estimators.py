"""sklearn-style estimators wrapping the detection/normalization/recognition
stages, so the pipeline composes with the wider ecosystem (clone,
get_params/set_params, Pipeline)."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin

from irisauth.classifier import ClassifierConfig, build_classifier, classifier_forward
from irisauth.detect import (
    AnchorGridConfig, Box, Detection, DetectorConfig, DetectorTrainConfig,
    detect_best_region, iou,
)
from irisauth.detect.train import fit_detector_arrays
from irisauth.errors import ContractViolation
from irisauth.harness import TrainConfig, early_stop, evaluate
from irisauth.nn import ops
from irisauth.nn.tensor import GradTape, Tensor
from irisauth.optim import Optimizer, OptimHyper
from irisauth.preprocess import PipelineConfig, preprocess_pipeline
from irisauth.validation import as_box_array, as_image_batch, check_fitted

__all__ = ["IrisDetector", "IrisNormalizer", "IrisClassifier"]


class IrisDetector(BaseEstimator):
    """Anchor-based iris region detector with a fit/predict surface.

    ``fit(X, y)`` takes [N,C,H,W] images (0..255 values) and [N,4]
    ground-truth boxes; ``predict`` returns one
    :class:`~irisauth.detect.Detection` or None per image.
    """

    def __init__(self, backbone_widths=(16, 32), block_strides=None,
                 kernel_size=3, scales=(1.0, 2.0, 4.0),
                 ratios=(0.5, 1.0, 2.0), base_size=None, pos_iou=0.7,
                 neg_iou=0.3, nms_iou=0.5, score_floor=0.05, epochs=30,
                 batch_size=8, lr=2e-3, smooth_l1_beta=1.0,
                 optimizer="amsgrad", seed=0):
        self.backbone_widths = backbone_widths
        self.block_strides = block_strides
        self.kernel_size = kernel_size
        self.scales = scales
        self.ratios = ratios
        self.base_size = base_size
        self.pos_iou = pos_iou
        self.neg_iou = neg_iou
        self.nms_iou = nms_iou
        self.score_floor = score_floor
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.smooth_l1_beta = smooth_l1_beta
        self.optimizer = optimizer
        self.seed = seed

    def _configs(self) -> tuple[DetectorConfig, DetectorTrainConfig]:
        widths = tuple(self.backbone_widths)
        strides = (tuple(self.block_strides) if self.block_strides is not None
                   else (2,) * len(widths))
        stride = 1
        for s in strides:
            stride *= s
        anchor = AnchorGridConfig(stride=stride, scales=tuple(self.scales),
                                  ratios=tuple(self.ratios),
                                  base_size=self.base_size)
        cfg = DetectorConfig(backbone_widths=widths, block_strides=strides,
                             kernel_size=self.kernel_size,
                             anchor=anchor, nms_iou=self.nms_iou,
                             score_floor=self.score_floor)
        train_cfg = DetectorTrainConfig(
            epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
            optimizer=self.optimizer, pos_thresh=self.pos_iou,
            neg_thresh=self.neg_iou, smooth_l1_beta=self.smooth_l1_beta,
            seed=self.seed)
        return cfg, train_cfg

    def fit(self, X, y, masks=None):
        """Train on images X with boxes y (and optional binary masks).

        Every provided sample trains; splitting is the caller's job.
        """
        batch = as_image_batch(X)
        boxes = as_box_array(y, batch.shape[0])
        cfg, train_cfg = self._configs()
        gt_boxes = [Box.from_array(b) for b in boxes]
        gt_masks = ([np.asarray(m, dtype=bool) for m in masks]
                    if masks is not None else [None] * batch.shape[0])
        params, trace, _, final_arrays, opt_state = fit_detector_arrays(
            list(batch), gt_boxes, gt_masks, cfg, train_cfg)
        self.params_ = params
        self.config_ = cfg
        self.trace_ = trace
        self.final_arrays_ = final_arrays
        self.opt_state_ = opt_state
        return self

    def predict(self, X) -> list[Detection | None]:
        check_fitted(self, "params_")
        batch = as_image_batch(X)
        return [detect_best_region(batch[i], self.params_, self.config_)
                for i in range(batch.shape[0])]

    def score(self, X, y) -> float:
        """Mean IoU between predictions and ground-truth boxes."""
        batch = as_image_batch(X)
        boxes = as_box_array(y, batch.shape[0])
        total = 0.0
        for det, gt in zip(self.predict(batch), boxes):
            if det is not None:
                total += iou(det.box, Box.from_array(gt))
        return total / batch.shape[0]


class IrisNormalizer(BaseEstimator, TransformerMixin):
    """Stateless transformer: (image, region) pairs -> [N,3,S,S] squares.

    ``X`` is a sequence of ``(image, box_or_detection)`` pairs; images
    carry 0..255 values and may be single-channel.
    """

    def __init__(self, square_size=299, classifier_input=None):
        self.square_size = square_size
        self.classifier_input = classifier_input

    def _config(self) -> PipelineConfig:
        return PipelineConfig(square_size=self.square_size,
                              classifier_input=self.classifier_input)

    def fit(self, X=None, y=None):
        self._config()  # validates the parameters
        return self

    def transform(self, X) -> np.ndarray:
        cfg = self._config()
        crops = []
        for item in X:
            try:
                image, region = item
            except (TypeError, ValueError) as exc:
                raise ContractViolation(
                    "IrisNormalizer expects (image, box-or-detection) pairs"
                ) from exc
            if not isinstance(region, (Box, Detection)):
                region = Box.from_array(np.asarray(region, dtype=np.float64))
            crops.append(preprocess_pipeline(np.asarray(image), region, cfg))
        if not crops:
            raise ContractViolation("empty input to IrisNormalizer.transform")
        return np.stack(crops)


class IrisClassifier(BaseEstimator, ClassifierMixin):
    """CNN identity classifier over normalized [N,3,S,S] crops.

    Training follows the recognizer recipe (AMSGrad, mini-batches,
    optional early stopping against a validation split carved from the
    training data).  ``classes_`` maps predictions back to the original
    label values.
    """

    def __init__(self, widths=(16, 32, 64), epochs=17, batch_size=8,
                 lr=1e-4, optimizer="amsgrad", patience=17,
                 val_fraction=0.0, center_inputs=True, seed=0):
        self.widths = widths
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.optimizer = optimizer
        self.patience = patience
        self.val_fraction = val_fraction
        self.center_inputs = center_inputs
        self.seed = seed

    def fit(self, X, y):
        batch = as_image_batch(X, channels=3)
        y = np.asarray(y)
        if y.shape != (batch.shape[0],):
            raise ContractViolation(
                f"labels shape {y.shape} != ({batch.shape[0]},)")
        if batch.shape[2] != batch.shape[3]:
            raise ContractViolation(
                f"classifier inputs must be square, got {batch.shape[2:]}")
        # Shared-protocol validation happens in TrainConfig.
        TrainConfig(batch_size=self.batch_size, epochs=self.epochs,
                    lr=self.lr, patience=self.patience,
                    optimizer=self.optimizer, seed=self.seed)
        self.classes_, targets = np.unique(y, return_inverse=True)
        cfg = ClassifierConfig(num_classes=len(self.classes_),
                               input_size=batch.shape[2],
                               widths=tuple(self.widths),
                               center_inputs=self.center_inputs)
        params = build_classifier(cfg, seed=self.seed)
        opt = Optimizer(params, OptimHyper(lr=self.lr), kind=self.optimizer)
        rng = np.random.default_rng([self.seed, 0xE571])

        n = batch.shape[0]
        if self.val_fraction and 0.0 < self.val_fraction < 1.0:
            order = rng.permutation(n)
            n_val = max(int(round(n * self.val_fraction)), 1)
            val_idx, train_idx = order[:n_val], order[n_val:]
        else:
            val_idx, train_idx = None, np.arange(n)
        if train_idx.size == 0:
            raise ContractViolation("empty training split")

        history: list[float] = []
        best = None
        for _ in range(self.epochs):
            order = rng.permutation(train_idx.size)
            shuffled = train_idx[order]
            for start in range(0, shuffled.size, self.batch_size):
                idx = shuffled[start:start + self.batch_size]
                xb = Tensor(batch[idx])
                with GradTape() as tape:
                    logits = classifier_forward(xb, params, cfg)
                    loss = ops.cross_entropy(logits, targets[idx])
                    params.zero_grads()
                    tape.backward(loss, params)
                opt.step()
            if val_idx is not None:
                acc, _ = evaluate(params, cfg, batch[val_idx], targets[val_idx])
                history.append(round(acc, 6))
                if best is None or acc > best[0]:
                    best = (acc, {k: v.copy() for k, v in params.arrays().items()})
                if early_stop(history, self.patience):
                    break
        if best is not None:
            self.final_arrays_ = {k: v.copy() for k, v in params.arrays().items()}
            params.load_arrays(best[1])
        else:
            self.final_arrays_ = params.arrays()
        self.params_ = params
        self.config_ = cfg
        self.opt_state_ = opt.state
        return self

    def _logits(self, X) -> np.ndarray:
        check_fitted(self, "params_")
        batch = as_image_batch(X, channels=3)
        outs = []
        for start in range(0, batch.shape[0], 64):
            xb = Tensor(batch[start:start + 64])
            outs.append(classifier_forward(xb, self.params_, self.config_).data)
        return np.concatenate(outs, axis=0)

    def predict(self, X) -> np.ndarray:
        logits = self._logits(X)
        return self.classes_[logits.argmax(axis=1)]

    def predict_proba(self, X) -> np.ndarray:
        return ops.softmax_np(self._logits(X), axis=1)
