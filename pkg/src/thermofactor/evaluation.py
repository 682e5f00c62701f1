"""Detection scoring: binarization, Jaccard, threshold sweeps, SNR and noise robustness."""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from scipy import ndimage

from . import seqio
from .errors import DegenerateInputError, ParameterError
from .factor import MAX_ROI_CONTRAST, Method, SolverOptions, factorize, select_component, shift_to_nonnegative

logger = logging.getLogger(__name__)


def _mask(a, name) -> np.ndarray:
    a = np.asarray(a)
    if a.ndim != 2:
        raise ParameterError(f"{name} must be a 2-D mask")
    return a.astype(bool)


def jaccard(detected, gt) -> float:
    detected, gt = _mask(detected, "detected"), _mask(gt, "gt")
    if detected.shape != gt.shape:
        raise ParameterError(f"mask shapes differ: {detected.shape} vs {gt.shape}")
    if not gt.any():
        raise ParameterError("ground-truth mask is empty")
    return float(np.count_nonzero(detected & gt) / np.count_nonzero(detected | gt))


def binarize(image, threshold_quantile: float, with_flag: bool = False):
    """Foreground where ``value >= min + q * (max - min)``.

    A constant image is all foreground; ``with_flag=True`` returns
    ``(mask, degenerate)``.
    """
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise ParameterError("image has non-finite values")
    if not 0 < threshold_quantile < 1:
        raise ParameterError(f"threshold quantile must lie in (0, 1), got {threshold_quantile}")
    lo, hi = float(image.min()), float(image.max())
    degenerate = hi == lo
    if degenerate:
        mask = np.ones(image.shape, dtype=bool)
    else:
        mask = image >= lo + threshold_quantile * (hi - lo)
    return (mask, degenerate) if with_flag else mask


def sweep_levels(step: float) -> List[float]:
    if not 0 < step <= 0.5:
        raise ParameterError(f"step must lie in (0, 0.5], got {step}")
    levels = []
    i = 1
    while i * step < 1 - 1e-9:
        levels.append(round(i * step, 12))
        i += 1
    return levels


@dataclass(frozen=True)
class SweepResult:
    thresholds: List[float]
    jaccard_per_threshold: List[float]
    best_threshold: float
    best_jaccard: float
    polarity: int  # +1 bright defects, -1 dark defects
    jaccard_positive: List[float]
    jaccard_negative: Optional[List[float]] = None


def _curve(image, gt, levels, window=None):
    lo, hi = float(image.min()), float(image.max())
    out = []
    for q in levels:
        mask = np.ones(image.shape, bool) if hi == lo else image >= lo + q * (hi - lo)
        if window is not None:
            mask = mask & window
        out.append(jaccard(mask, gt))
    return out


def threshold_sweep(image, gt, step: float = 0.05, invert: bool = True, window=None) -> SweepResult:
    """Jaccard at every swept quantile, best over both polarities when ``invert``.

    ``window`` restricts the detected mask (thresholds still use the range of
    the whole image).  Ties keep positive polarity and the lowest threshold.
    """
    image = np.asarray(image, dtype=np.float64)
    gt = _mask(gt, "gt")
    if image.shape != gt.shape:
        raise ParameterError(f"image shape {image.shape} does not match gt {gt.shape}")
    if not gt.any():
        raise ParameterError("ground-truth mask is empty")
    levels = sweep_levels(step)
    pos = _curve(image, gt, levels, window)
    neg = _curve(-image, gt, levels, window) if invert else None
    curve, polarity = pos, 1
    if neg is not None and max(neg) > max(pos):
        curve, polarity = neg, -1
    best = int(np.argmax(curve))
    return SweepResult(levels, curve, levels[best], curve[best], polarity, pos, neg)


def snr(image, signal_roi, noise_roi) -> float:
    """``10 log10(|mu_S - mu_N|^2 / sigma_N^2)`` with the population std of the noise region.

    Equal means give ``-inf`` (logged); a constant noise region raises
    :class:`DegenerateInputError`.
    """
    image = np.asarray(image, dtype=np.float64)
    s, n = _mask(signal_roi, "signal_roi"), _mask(noise_roi, "noise_roi")
    if s.shape != image.shape or n.shape != image.shape:
        raise ParameterError("ROI shapes must match the image")
    if not s.any():
        raise ParameterError("signal ROI is empty")
    if np.count_nonzero(n) < 2:
        raise ParameterError("noise ROI needs at least two pixels")
    if (s & n).any():
        raise ParameterError("signal and noise ROIs overlap")
    mu_s = float(image[s].mean())
    noise = image[n]
    mu_n, sigma = float(noise.mean()), float(noise.std())
    if sigma == 0:
        raise DegenerateInputError("noise region is constant (sigma_N = 0)")
    diff = abs(mu_s - mu_n)
    if diff == 0:
        logger.warning("snr: signal and noise means coincide")
        return -math.inf
    return 10 * math.log10(diff ** 2 / sigma ** 2)


def sound_region(gt, margin: int = 2) -> np.ndarray:
    """Pixels at least ``margin`` pixels away from every defect."""
    gt = _mask(gt, "gt")
    if margin <= 0:
        return ~gt
    return ~ndimage.binary_dilation(gt, iterations=margin)


def defect_windows(masks: Sequence[np.ndarray]) -> List[np.ndarray]:
    """Each defect dilated by its equivalent radius, minus the other defects."""
    masks = [_mask(m, "defect mask") for m in masks]
    union = np.zeros_like(masks[0]) if masks else None
    for m in masks:
        union |= m
    out = []
    for m in masks:
        radius = max(1, int(round(math.sqrt(np.count_nonzero(m) / math.pi))))
        grown = ndimage.binary_dilation(m, iterations=radius)
        out.append(grown & ~(union & ~m))
    return out


@dataclass(frozen=True)
class DefectScore:
    index: int
    best_jaccard: float
    best_threshold: float
    polarity: int


def per_defect_scores(image, masks: Sequence[np.ndarray], step: float = 0.05,
                      invert: bool = True) -> List[DefectScore]:
    """Best Jaccard of every defect inside its own window."""
    scores = []
    for i, (m, w) in enumerate(zip(masks, defect_windows(masks))):
        r = threshold_sweep(image, m, step, invert, window=w)
        scores.append(DefectScore(i, r.best_jaccard, r.best_threshold, r.polarity))
    return scores


@dataclass(frozen=True)
class RobustnessPoint:
    level: float
    snr: float
    best_jaccard: float
    best_threshold: float
    polarity: int
    component: int


def _robustness_point(seq, level, method, k, lam, opts, gt, signal_roi, noise_roi, seed, step, invert):
    noisy = seqio.add_gaussian_noise(seq, level, seed)
    X = seqio.vectorize(noisy).values
    if Method.parse(method).requires_nonnegative:
        X = shift_to_nonnegative(X)
    model = factorize(seqio.DataMatrix(X, noisy.dims), method, k, lam, opts)
    index, image = select_component(model, gt, MAX_ROI_CONTRAST)
    sweep = threshold_sweep(image, gt, step, invert)
    return RobustnessPoint(level, snr(image, signal_roi, noise_roi), sweep.best_jaccard,
                           sweep.best_threshold, sweep.polarity, index)


def robustness_curve(X, method, k: int, gt, signal_roi, noise_roi, noise_levels: Sequence[float],
                     seed: int, lam: float = 0.0, opts: SolverOptions = SolverOptions(),
                     step: float = 0.05, invert: bool = True, threads: int = 1) -> List[RobustnessPoint]:
    """Noise, refactorize, select and score at every level (one noise seed for all levels)."""
    if isinstance(X, seqio.ThermalSequence):
        seq = X
    elif isinstance(X, seqio.DataMatrix):
        seq = seqio.to_sequence(X)
    else:
        raise ParameterError("robustness_curve needs a ThermalSequence or DataMatrix")
    levels = [float(v) for v in noise_levels]
    if any(v < 0 for v in levels):
        raise ParameterError("noise levels must be >= 0")

    def run(level):
        return _robustness_point(seq, level, method, k, lam, opts, gt, signal_roi, noise_roi,
                                 seed, step, invert)

    if threads > 1 and len(levels) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(run, levels))
    return [run(level) for level in levels]


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\r\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _fmt(x) -> str:
    if isinstance(x, float):
        return repr(x)
    return str(x)


def sweep_csv(result: SweepResult) -> str:
    rows = [(_fmt(t), _fmt(j), "", result.polarity)
            for t, j in zip(result.thresholds, result.jaccard_per_threshold)]
    return _csv_text(["level_or_threshold", "jaccard", "snr", "polarity"], rows)


def robustness_csv(points: Sequence[RobustnessPoint]) -> str:
    rows = [(_fmt(p.level), _fmt(p.best_jaccard), _fmt(p.snr), p.polarity) for p in points]
    return _csv_text(["level_or_threshold", "jaccard", "snr", "polarity"], rows)
