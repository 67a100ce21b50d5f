"""Input validation helpers for the estimator layer."""

from __future__ import annotations

import numpy as np

from irisauth.errors import ContractViolation

__all__ = ["as_image_batch", "as_box_array", "check_fitted"]


def as_image_batch(X, channels: int | None = None) -> np.ndarray:
    """Coerce a batch of [C,H,W] images (array or sequence) to float32.

    All images must share one shape; channel count is checked when
    ``channels`` is given.
    """
    if isinstance(X, np.ndarray):
        batch = np.asarray(X, dtype=np.float32)
        if batch.ndim != 4:
            raise ContractViolation(
                f"expected a 4-d [N,C,H,W] batch, got shape {batch.shape}")
    else:
        images = [np.asarray(im, dtype=np.float32) for im in X]
        if not images:
            raise ContractViolation("empty image batch")
        shapes = {im.shape for im in images}
        if len(shapes) != 1:
            raise ContractViolation(f"images must share one shape, got {shapes}")
        if images[0].ndim != 3:
            raise ContractViolation(
                f"each image must be [C,H,W], got shape {images[0].shape}")
        batch = np.stack(images)
    if channels is not None and batch.shape[1] != channels:
        raise ContractViolation(
            f"expected {channels} channels, got {batch.shape[1]}")
    if not np.all(np.isfinite(batch)):
        raise ContractViolation("image batch contains non-finite values")
    return np.ascontiguousarray(batch)


def as_box_array(y, n: int) -> np.ndarray:
    """Coerce targets to an [n,4] float array of boxes."""
    arr = np.asarray(y, dtype=np.float64)
    if arr.shape != (n, 4):
        raise ContractViolation(
            f"expected {n} boxes of 4 coordinates, got shape {arr.shape}")
    if np.any(arr[:, 2] < arr[:, 0]) or np.any(arr[:, 3] < arr[:, 1]):
        raise ContractViolation("boxes must satisfy x_min <= x_max, y_min <= y_max")
    return arr


def check_fitted(estimator, attribute: str) -> None:
    from sklearn.exceptions import NotFittedError

    if getattr(estimator, attribute, None) is None:
        raise NotFittedError(
            f"{type(estimator).__name__} is not fitted; call fit first")
