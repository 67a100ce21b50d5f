"""Scale-variant normalization: crop, width-locked resize, zero padding.

A detected region becomes a fixed S x S square: the crop is resized so
its width equals S (height follows the aspect ratio), placed at the
top-left of an S x S canvas, and every vacant cell is exactly 0.0.
Crops taller than wide fall back to height-locked scaling with
right-side padding, keeping the contract total.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from irisauth.errors import ContractViolation
from irisauth.nn.ops import interp_matrix
from irisauth.detect.geometry import Box, Detection

__all__ = [
    "PipelineConfig", "crop_box", "resize_to_width", "zero_pad_square",
    "grey_to_3ch", "pixel_normalize", "preprocess_pipeline",
    "resize_bilinear",
]


@dataclass(frozen=True)
class PipelineConfig:
    """Normalization geometry.  The pad value is 0.0 by definition and
    deliberately not configurable."""

    square_size: int = 299
    classifier_input: int | None = None  # None: keep square_size
    center_content: bool = False

    def __post_init__(self):
        if self.square_size <= 0:
            raise ContractViolation(
                f"square_size must be positive, got {self.square_size}")
        if self.classifier_input is not None and self.classifier_input <= 0:
            raise ContractViolation(
                f"classifier_input must be positive, got {self.classifier_input}")

    @property
    def output_size(self) -> int:
        return self.classifier_input or self.square_size


def resize_bilinear(data: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of [C,H,W] with half-pixel-center alignment."""
    rm = interp_matrix(data.shape[-2], out_h)
    cm = interp_matrix(data.shape[-1], out_w)
    x64 = data.astype(np.float64)
    t = np.einsum("oh,chw->cow", rm, x64)
    return np.einsum("pw,cow->cop", cm, t).astype(np.float32)


def crop_box(image: np.ndarray, box: Box) -> np.ndarray:
    """Integer-pixel crop of ``box`` clamped to the image rectangle.

    Bounds are floor(min)/ceil(max); a box entirely outside the image is
    a contract violation.
    """
    if image.ndim != 3:
        raise ContractViolation(f"expected [C,H,W] image, got shape {image.shape}")
    _, h, w = image.shape
    x0 = max(int(np.floor(box.x_min)), 0)
    y0 = max(int(np.floor(box.y_min)), 0)
    x1 = min(int(np.ceil(box.x_max)), w)
    y1 = min(int(np.ceil(box.y_max)), h)
    if x1 <= x0 or y1 <= y0:
        raise ContractViolation(
            f"box ({box.x_min},{box.y_min},{box.x_max},{box.y_max}) has no "
            f"area inside a {w}x{h} image")
    return np.ascontiguousarray(image[:, y0:y1, x0:x1])


def resize_to_width(image: np.ndarray, square: int) -> np.ndarray:
    """Aspect-preserving resize so width equals ``square``.

    Height becomes round(h * square / w).  If that would exceed the
    square, the crop is taller than wide and we scale by height instead,
    leaving the width short (the right side gets padded downstream).
    """
    if image.ndim != 3 or image.shape[1] == 0 or image.shape[2] == 0:
        raise ContractViolation(f"empty image of shape {image.shape}")
    _, h, w = image.shape
    new_h = int(np.rint(h * square / w))
    if new_h <= square:
        new_w = square
        new_h = max(new_h, 1)
    else:
        new_h = square
        new_w = max(int(np.rint(w * square / h)), 1)
    if (new_h, new_w) == (h, w):
        return np.ascontiguousarray(image, dtype=np.float32)
    return resize_bilinear(image, new_h, new_w)


def zero_pad_square(image: np.ndarray, square: int,
                    center: bool = False) -> np.ndarray:
    """Place the image on a square canvas of exact zeros.

    Content sits at the top-left by default (padding below and to the
    right); ``center`` switches to centered placement.
    """
    if image.ndim != 3:
        raise ContractViolation(f"expected [C,H,W] image, got shape {image.shape}")
    c, h, w = image.shape
    if h > square or w > square:
        raise ContractViolation(
            f"image {h}x{w} does not fit the {square}x{square} canvas")
    if (h, w) == (square, square):
        return np.ascontiguousarray(image, dtype=np.float32)
    out = np.zeros((c, square, square), dtype=np.float32)
    top = (square - h) // 2 if center else 0
    left = (square - w) // 2 if center else 0
    out[:, top:top + h, left:left + w] = image
    return out


def grey_to_3ch(image: np.ndarray) -> np.ndarray:
    """Stack a single-channel image into three identical channels."""
    if image.ndim != 3 or image.shape[0] != 1:
        raise ContractViolation(
            f"grey_to_3ch expects [1,H,W], got shape {image.shape}")
    return np.ascontiguousarray(np.repeat(image, 3, axis=0))


def pixel_normalize(image: np.ndarray) -> np.ndarray:
    """Scale 0..255 intensities to [0,1]."""
    arr = np.asarray(image, dtype=np.float32)
    if arr.size and (arr.min() < 0.0 or arr.max() > 255.0):
        raise ContractViolation(
            f"pixel values outside [0,255]: range [{arr.min()}, {arr.max()}]")
    return arr / np.float32(255.0)


def preprocess_pipeline(image: np.ndarray, detection: Detection | Box,
                        cfg: PipelineConfig) -> np.ndarray:
    """Detection on a raw image -> normalized [3,S,S] classifier input.

    Stage order: crop -> width-locked resize -> zero-pad square ->
    channel stack (grey inputs only) -> intensity normalize -> optional
    downsample to ``classifier_input``.  The padded cells stay exactly
    0.0 through every stage.
    """
    box = detection.box if isinstance(detection, Detection) else detection
    out = crop_box(np.asarray(image, dtype=np.float32), box)
    out = resize_to_width(out, cfg.square_size)
    out = zero_pad_square(out, cfg.square_size, center=cfg.center_content)
    if out.shape[0] == 1:
        out = grey_to_3ch(out)
    out = pixel_normalize(out)
    if cfg.classifier_input is not None and cfg.classifier_input != cfg.square_size:
        out = resize_bilinear(out, cfg.classifier_input, cfg.classifier_input)
    return out
