"""Iris authentication pipeline: detection, normalization, recognition.

The high-level surface is sklearn-style:

* :class:`~irisauth.estimators.IrisDetector` -- fit on labeled eye
  images, predict the best iris region per image.
* :class:`~irisauth.estimators.IrisNormalizer` -- transform (image,
  region) pairs into fixed-size zero-padded squares.
* :class:`~irisauth.estimators.IrisClassifier` -- fit/predict identities
  on normalized crops.

Lower-level building blocks live in :mod:`irisauth.nn` (autodiff ops),
:mod:`irisauth.detect`, :mod:`irisauth.preprocess`,
:mod:`irisauth.classifier`, :mod:`irisauth.optim`,
:mod:`irisauth.harness`, and :mod:`irisauth.datagen`.
"""

from irisauth.estimators import IrisClassifier, IrisDetector, IrisNormalizer

__version__ = "0.1.0"

__all__ = ["IrisClassifier", "IrisDetector", "IrisNormalizer", "__version__"]
