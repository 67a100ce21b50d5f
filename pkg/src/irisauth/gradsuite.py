"""Standard finite-difference suite over every differentiable operation.

Each check builds a small randomized instance, reduces the op output to
a scalar through a fixed random projection, and compares tape gradients
with central differences.  Inputs for kinked ops (relu, smooth_l1) are
sampled away from their kinks, where finite differences are undefined.
"""

from __future__ import annotations

import numpy as np

from irisauth.classifier import ClassifierConfig, build_classifier, classifier_forward
from irisauth.detect.geometry import AnchorGridConfig
from irisauth.detect.model import (
    DetectorConfig, backbone_forward, build_detector, mask_head_forward,
    multi_task_loss, rpn_forward,
)
from irisauth.nn import ops
from irisauth.nn.gradcheck import (
    GradCheckResult, finite_difference_check, make_projection, project,
)
from irisauth.nn.tensor import Tensor

__all__ = ["run_suite", "SUITE_NAMES"]


def _rand(rng, *shape, away_from=None, margin=0.05):
    x = rng.normal(0.0, 1.0, size=shape).astype(np.float32)
    if away_from is not None:
        shift = np.where(x >= away_from, margin, -margin).astype(np.float32)
        x = np.where(np.abs(x - away_from) < margin, x + shift, x)
    return x


def _check_conv(rng, stride, pad, name):
    x = Tensor(_rand(rng, 1, 2, 5, 5))
    k = Tensor(_rand(rng, 3, 2, 3, 3) * 0.5)
    b = Tensor(_rand(rng, 3) * 0.1)
    fn, fn_value = _projected(rng, lambda: ops.conv2d(x, k, b, stride=stride, pad=pad))
    return finite_difference_check(fn, {"x": x, "kernel": k, "bias": b},
                                   name=name, fn_value=fn_value)


def _check_linear(rng):
    x = Tensor(_rand(rng, 3, 4))
    w = Tensor(_rand(rng, 5, 4) * 0.5)
    b = Tensor(_rand(rng, 5) * 0.1)
    fn, fn_value = _projected(rng, lambda: ops.linear(x, w, b))
    return finite_difference_check(fn, {"x": x, "weight": w, "bias": b},
                                   name="linear", fn_value=fn_value)


def _projected(rng, make_out):
    """(tape objective, float64 objective) pair sharing one projection."""
    weights = {}

    def _ensure(shape):
        if "w" not in weights:
            weights["w"] = make_projection(shape, rng)
            weights["w64"] = weights["w"].astype(np.float64)

    def fn():
        out = make_out()
        _ensure(out.data.shape)
        return project(out, weights["w"])

    def fn_value():
        out = make_out()
        _ensure(out.data.shape)
        return float(np.sum(out.data.astype(np.float64) * weights["w64"]))

    return fn, fn_value


# Finite differences are undefined across a relu kink: perturbing a
# parameter by eps flips any unit whose pre-activation sits within
# ~eps * |dz/dtheta| of zero, and the flip contributes an O(1) error.
# Composite checks therefore redraw their instance until every relu
# input clears this margin, and keep instances small so acceptance
# stays likely.
_KINK_MARGIN = 2e-2
_MAX_DRAWS = 400


def _conv_chain_preacts(x: Tensor, layers) -> tuple[list[Tensor], float]:
    """Run conv(+relu) layers, returning outputs plus min |relu input|."""
    margin = np.inf
    outs = []
    h = x
    for w, b, stride, use_relu in layers:
        z = ops.conv2d(h, w, b, stride=stride, pad=ops.PadMode.SAME)
        if use_relu:
            margin = min(margin, float(np.abs(z.data).min()))
            h = ops.relu(z)
        else:
            h = z
        outs.append(h)
    return outs, margin


def _check_rpn(rng):
    anchor = AnchorGridConfig(stride=4, scales=(1.0, 2.0), ratios=(1.0,))
    cfg = DetectorConfig(backbone_widths=(4, 6), anchor=anchor)
    for _ in range(_MAX_DRAWS):
        params = build_detector(cfg, seed=int(rng.integers(2**31)))
        x = Tensor(np.clip(_rand(rng, 1, 3, 8, 8), -2.5, 2.5))
        layers = [
            (params["backbone.0.w"], params["backbone.0.b"], 2, True),
            (params["backbone.1.w"], params["backbone.1.b"], 2, True),
            (params["rpn.shared.w"], params["rpn.shared.b"], 1, True),
        ]
        _, margin = _conv_chain_preacts(x, layers)
        if margin >= _KINK_MARGIN:
            break
    weights = {}

    def _heads():
        feats = backbone_forward(x, params, cfg)
        scores, deltas = rpn_forward(feats, params, cfg)
        if "ws" not in weights:
            weights["ws"] = make_projection(scores.data.shape, rng)
            weights["wd"] = make_projection(deltas.data.shape, rng)
        return scores, deltas

    def fn():
        scores, deltas = _heads()
        return ops.add(project(scores, weights["ws"]),
                       project(deltas, weights["wd"]))

    def fn_value():
        scores, deltas = _heads()
        return float(
            np.sum(scores.data.astype(np.float64) * weights["ws"])
            + np.sum(deltas.data.astype(np.float64) * weights["wd"]))

    wrt = {name: params[name] for name in params.names()
           if not name.startswith("mask.")}
    return finite_difference_check(fn, wrt, name="rpn_forward",
                                   fn_value=fn_value)


def _check_mask_head(rng):
    anchor = AnchorGridConfig(stride=4, scales=(1.0, 2.0), ratios=(1.0,))
    cfg = DetectorConfig(backbone_widths=(4, 6), anchor=anchor,
                         mask_size=8, mask_pool=4)
    for _ in range(_MAX_DRAWS):
        params = build_detector(cfg, seed=int(rng.integers(2**31)))
        crop = Tensor(np.clip(_rand(rng, 6, 5, 7), -2.5, 2.5))
        pooled = ops.adaptive_avg_pool2d(Tensor(crop.data[None]), 4, 4)
        z = ops.conv2d(pooled, params["mask.conv.w"], params["mask.conv.b"],
                       stride=1, pad=ops.PadMode.SAME)
        if float(np.abs(z.data).min()) >= _KINK_MARGIN:
            break
    fn, fn_value = _projected(rng, lambda: mask_head_forward(crop, params, cfg))
    wrt = {"crop": crop,
           "mask.conv.w": params["mask.conv.w"],
           "mask.conv.b": params["mask.conv.b"],
           "mask.out.w": params["mask.out.w"],
           "mask.out.b": params["mask.out.b"]}
    return finite_difference_check(fn, wrt, name="mask_head_forward",
                                   fn_value=fn_value)


def _check_multi_task(rng):
    scores = Tensor(_rand(rng, 6, 2))
    labels = np.array([1, 0, 1, 0, 1, 0])
    # Residuals bounded at 0.8 < beta keep the box term off its kink.
    targets = _rand(rng, 3, 4) * 0.4
    deltas = Tensor(targets + np.clip(_rand(rng, 3, 4), -0.8, 0.8))
    mask_logits = Tensor(_rand(rng, 2, 4, 4))
    mask_targets = np.clip(rng.uniform(0, 1, size=(2, 4, 4)), 0, 1).astype(np.float32)

    def fn():
        total, _ = multi_task_loss(scores, labels, deltas, targets,
                                   mask_logits, mask_targets)
        return total

    return finite_difference_check(
        fn, {"scores": scores, "deltas": deltas, "mask_logits": mask_logits},
        name="multi_task_loss")


def _check_classifier(rng):
    cfg = ClassifierConfig(num_classes=5, input_size=12, widths=(3, 4))
    for _ in range(_MAX_DRAWS):
        params = build_classifier(cfg, seed=int(rng.integers(2**31)))
        x = Tensor(np.clip(_rand(rng, 2, 3, 12, 12), -2.5, 2.5))
        layers = [(params[f"block.{i}.w"], params[f"block.{i}.b"], 2, True)
                  for i in range(len(cfg.widths))]
        _, margin = _conv_chain_preacts(x, layers)
        if margin >= _KINK_MARGIN:
            break
    y = rng.integers(0, 5, size=2)

    def fn():
        logits = classifier_forward(x, params, cfg)
        return ops.cross_entropy(logits, y)

    wrt = {name: params[name] for name in params.names()}
    return finite_difference_check(fn, wrt, name="classifier_forward")


def _checks(rng) -> list[GradCheckResult]:
    results = [
        _check_conv(rng, 1, ops.PadMode.VALID, "conv2d/valid"),
        _check_conv(rng, 1, ops.PadMode.SAME, "conv2d/same"),
        _check_conv(rng, 2, ops.PadMode.SAME, "conv2d/same-stride2"),
        _check_linear(rng),
    ]

    x = Tensor(_rand(rng, 4, 6, away_from=0.0))
    fn, fn_value = _projected(rng, lambda: ops.relu(x))
    results.append(finite_difference_check(
        fn, {"x": x}, name="relu", fn_value=fn_value))

    x = Tensor(_rand(rng, 2, 3, 6, 7))
    fn, fn_value = _projected(rng, lambda: ops.adaptive_avg_pool2d(x, 3, 3))
    results.append(finite_difference_check(
        fn, {"x": x}, name="adaptive_avg_pool2d", fn_value=fn_value))

    x = Tensor(_rand(rng, 3, 4, 9))
    fn, fn_value = _projected(rng, lambda: ops.adaptive_avg_pool1d(x, 4))
    results.append(finite_difference_check(
        fn, {"x": x}, name="adaptive_avg_pool1d", fn_value=fn_value))

    x = Tensor(_rand(rng, 1, 2, 4, 5))
    fn, fn_value = _projected(rng, lambda: ops.upsample_bilinear(x, 7, 9))
    results.append(finite_difference_check(
        fn, {"x": x}, name="upsample_bilinear", fn_value=fn_value))

    x = Tensor(_rand(rng, 1, 3, 6, 6))
    fn, fn_value = _projected(rng, lambda: ops.roi_crop(x, 0, 1, 5, 2, 6))
    results.append(finite_difference_check(
        fn, {"x": x}, name="roi_crop", fn_value=fn_value))

    x = Tensor(_rand(rng, 7, 3))
    idx = rng.integers(0, 7, size=5)
    fn, fn_value = _projected(rng, lambda: ops.gather_rows(x, idx))
    results.append(finite_difference_check(
        fn, {"x": x}, name="gather_rows", fn_value=fn_value))

    x = Tensor(_rand(rng, 4, 5))
    fn, fn_value = _projected(rng, lambda: ops.log_softmax(x))
    results.append(finite_difference_check(
        fn, {"x": x}, name="log_softmax", fn_value=fn_value))

    x = Tensor(_rand(rng, 4, 5))
    y = rng.integers(0, 5, size=4)
    results.append(finite_difference_check(
        lambda: ops.cross_entropy(x, y), {"x": x}, name="cross_entropy"))

    # Residuals clipped inside (-beta, beta) so central differences never
    # straddle the kink at |d| = beta.
    pred = Tensor(np.clip(_rand(rng, 3, 4), -0.85, 0.85))
    target = Tensor(np.zeros((3, 4), dtype=np.float32))
    results.append(finite_difference_check(
        lambda: ops.smooth_l1(pred, target, beta=1.0),
        {"pred": pred}, name="smooth_l1"))

    logits = Tensor(_rand(rng, 3, 5))
    targets = Tensor(np.clip(rng.uniform(0, 1, size=(3, 5)), 0, 1).astype(np.float32))
    results.append(finite_difference_check(
        lambda: ops.binary_cross_entropy_with_logits(logits, targets),
        {"logits": logits}, name="bce_with_logits"))

    results.append(_check_rpn(rng))
    results.append(_check_mask_head(rng))
    results.append(_check_multi_task(rng))
    results.append(_check_classifier(rng))
    return results


SUITE_NAMES = [
    "conv2d/valid", "conv2d/same", "conv2d/same-stride2", "linear", "relu",
    "adaptive_avg_pool2d", "adaptive_avg_pool1d", "upsample_bilinear",
    "roi_crop", "gather_rows", "log_softmax", "cross_entropy", "smooth_l1",
    "bce_with_logits", "rpn_forward", "mask_head_forward",
    "multi_task_loss", "classifier_forward",
]


def run_suite(seeds: int = 20, base_seed: int = 0) -> list[GradCheckResult]:
    """Run every check across ``seeds`` seeds, keeping the worst result
    per check name."""
    worst: dict[str, GradCheckResult] = {}
    for s in range(seeds):
        rng = np.random.default_rng([base_seed, 0x9CAD, s])
        for result in _checks(rng):
            prev = worst.get(result.name)
            if prev is None or result.max_rel_error > prev.max_rel_error:
                worst[result.name] = result
    return [worst[name] for name in SUITE_NAMES]
