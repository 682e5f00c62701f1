"""Choosing the component image that shows the defects best."""
from __future__ import annotations

from typing import Tuple, Union

import numpy as np

from ..errors import ParameterError
from .model import FactorModel

MAX_ROI_CONTRAST = "max_roi_contrast"


def roi_contrast(image: np.ndarray, roi: np.ndarray, eps: float = 1e-12) -> float:
    """``|mean(inside) - mean(outside)| / (std(image) + eps)``."""
    inside, outside = image[roi], image[~roi]
    return float(abs(inside.mean() - outside.mean()) / (image.std() + eps))


def normalize01(image: np.ndarray) -> np.ndarray:
    lo, hi = float(image.min()), float(image.max())
    if hi == lo:
        return np.zeros_like(image, dtype=np.float64)
    return (image - lo) / (hi - lo)


def select_component(model: FactorModel, roi, criterion: Union[str, int] = MAX_ROI_CONTRAST
                     ) -> Tuple[int, np.ndarray]:
    """Pick one basis column and return it as a [0, 1]-normalized image.

    ``criterion`` is either ``"max_roi_contrast"`` (ties go to the lowest
    index) or an integer component index.
    """
    k = model.basis.shape[1]
    if isinstance(criterion, (int, np.integer)) and not isinstance(criterion, bool):
        index = int(criterion)
        if not 0 <= index < k:
            raise ParameterError(f"component index {index} out of range for k={k}")
        return index, normalize01(model.component_image(index))
    if criterion != MAX_ROI_CONTRAST:
        raise ParameterError(f"unknown selection criterion {criterion!r}")

    roi = np.asarray(roi, dtype=bool)
    if roi.shape != tuple(model.dims):
        raise ParameterError(f"roi shape {roi.shape} does not match image dims {model.dims}")
    if not roi.any():
        raise ParameterError("roi is empty")
    if roi.all():
        raise ParameterError("roi covers the whole image; no outside region to contrast with")
    scores = [roi_contrast(model.component_image(i), roi) for i in range(k)]
    index = int(np.argmax(scores))
    return index, normalize01(model.component_image(index))
