"""Co-occurrence texture features, Kruskal-Wallis testing and logistic stratification."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import stats

from .errors import DegenerateInputError, ParameterError

logger = logging.getLogger(__name__)

SENTINEL = -1
DEFAULT_LEVELS = 32
DEFAULT_OFFSETS: Tuple[Tuple[float, float], ...] = ((1.0, 0.0), (1.0, math.pi / 2))
FEATURE_NAMES = ("contrast", "dissimilarity", "homogeneity", "energy", "correlation")


def quantize(image, roi, levels: int = DEFAULT_LEVELS, with_flag: bool = False):
    """Min-max bin the ROI into ``0..levels-1``; pixels outside carry ``SENTINEL``."""
    image = np.asarray(image, dtype=np.float64)
    roi = np.asarray(roi, dtype=bool)
    if roi.shape != image.shape:
        raise ParameterError(f"roi shape {roi.shape} does not match image {image.shape}")
    if not roi.any():
        raise ParameterError("roi is empty")
    if int(levels) != levels or levels < 2:
        raise ParameterError(f"levels must be an integer >= 2, got {levels}")
    levels = int(levels)
    values = image[roi]
    lo, hi = float(values.min()), float(values.max())
    out = np.full(image.shape, SENTINEL, dtype=np.int64)
    degenerate = hi == lo
    if degenerate:
        out[roi] = 0
    else:
        out[roi] = np.clip(np.floor((values - lo) / (hi - lo) * levels), 0, levels - 1).astype(np.int64)
    return (out, degenerate) if with_flag else out


def offset_displacement(distance: float, angle: float) -> Tuple[int, int]:
    """(row, column) shift: ``(round(d sin(theta)), round(d cos(theta)))``."""
    return int(round(distance * math.sin(angle))), int(round(distance * math.cos(angle)))


@dataclass(frozen=True, eq=False)
class Tlcm:
    levels: int
    matrix: np.ndarray
    offsets: Tuple[Tuple[float, float], ...]
    symmetric: bool


def tlcm(levels_image, roi, offsets=DEFAULT_OFFSETS, levels: int = DEFAULT_LEVELS,
         symmetric: bool = True) -> Tlcm:
    q = np.asarray(levels_image)
    roi = np.asarray(roi, dtype=bool) & (q != SENTINEL)
    offsets = tuple((float(d), float(a)) for d, a in offsets)
    if not offsets:
        raise ParameterError("at least one offset is required")
    if q.size and (q[roi].max(initial=0) >= levels or q[roi].min(initial=0) < 0):
        raise ParameterError("level image has values outside 0..levels-1")
    n, m = q.shape
    counts = np.zeros((levels, levels), dtype=np.float64)
    for d, a in offsets:
        dr, dc = offset_displacement(d, a)
        if abs(dr) >= n or abs(dc) >= m:
            continue
        r0, r1 = max(0, -dr), min(n, n - dr)
        c0, c1 = max(0, -dc), min(m, m - dc)
        src = (slice(r0, r1), slice(c0, c1))
        dst = (slice(r0 + dr, r1 + dr), slice(c0 + dc, c1 + dc))
        valid = roi[src] & roi[dst]
        np.add.at(counts, (q[src][valid], q[dst][valid]), 1.0)
    if symmetric:
        counts = counts + counts.T
    total = counts.sum()
    if total == 0:
        raise DegenerateInputError("no pixel pair inside the roi for any offset")
    return Tlcm(levels, counts / total, offsets, symmetric)


@dataclass(frozen=True)
class TlcmFeatures:
    contrast: float
    dissimilarity: float
    homogeneity: float
    energy: float
    correlation: float
    degenerate: bool = False

    def vector(self) -> np.ndarray:
        return np.array([getattr(self, name) for name in FEATURE_NAMES])


def features(P, squared_dissimilarity: bool = False) -> TlcmFeatures:
    """The five co-occurrence properties.

    Dissimilarity is ``sum P |i-j|``; ``squared_dissimilarity=True`` squares ``|i-j|``
    instead, which makes it equal to contrast.  Zero marginal spread gives
    correlation 0 with ``degenerate`` set.
    """
    M = P.matrix if isinstance(P, Tlcm) else np.asarray(P, dtype=np.float64)
    L = M.shape[0]
    i, j = np.indices((L, L))
    diff = i - j
    contrast = float(np.sum(M * diff ** 2))
    dissimilarity = float(np.sum(M * (diff ** 2 if squared_dissimilarity else np.abs(diff))))
    homogeneity = float(np.sum(M / (1.0 + diff ** 2)))
    energy = float(math.sqrt(np.sum(M ** 2)))
    pi, pj = M.sum(axis=1), M.sum(axis=0)
    levels = np.arange(L)
    mu_i, mu_j = float(pi @ levels), float(pj @ levels)
    var_i = float(pi @ (levels - mu_i) ** 2)
    var_j = float(pj @ (levels - mu_j) ** 2)
    degenerate = var_i <= 0 or var_j <= 0
    if degenerate:
        correlation = 0.0
    else:
        correlation = float(np.sum(M * (i - mu_i) * (j - mu_j)) / math.sqrt(var_i * var_j))
        correlation = max(-1.0, min(1.0, correlation))
    return TlcmFeatures(contrast, dissimilarity, homogeneity, energy, correlation, degenerate)


def image_features(image, roi, levels: int = DEFAULT_LEVELS, offsets=DEFAULT_OFFSETS,
                   symmetric: bool = True,
                   squared_dissimilarity: bool = False) -> TlcmFeatures:
    q = quantize(image, roi, levels)
    return features(tlcm(q, roi, offsets, levels, symmetric), squared_dissimilarity)


# --------------------------------------------------------------------------
# Kruskal-Wallis

@dataclass(frozen=True)
class KruskalResult:
    H: float
    p_value: float
    method: str


def _rank_sums(a, b):
    pooled = np.concatenate([a, b])
    ranks = stats.rankdata(pooled)  # mid-ranks for ties
    return ranks, float(ranks[: len(a)].sum())


def _exact_p(ranks: np.ndarray, n_a: int, r_obs: float) -> float:
    """P(|R - E| >= |r_obs - E|) over all size-``n_a`` subsets of ``ranks``."""
    doubled = np.rint(2 * ranks).astype(np.int64)
    top = int(doubled.sum())
    table = np.zeros((n_a + 1, top + 1))
    table[0, 0] = 1.0
    for r in doubled:
        table[1:, r:] += table[:-1, : top + 1 - r].copy()
    sums = np.arange(top + 1)
    counts = table[n_a]
    expected2 = n_a * (len(ranks) + 1)
    extreme = np.abs(sums - expected2) >= abs(2 * r_obs - expected2) - 1e-9
    return float(counts[extreme].sum() / counts.sum())


def kruskal_wallis(group_a, group_b, method: str = "asymptotic") -> KruskalResult:
    """Two-group Kruskal-Wallis H with tie correction.

    ``method="asymptotic"`` takes p from chi-square(1); ``method="exact"``
    enumerates every relabelling of the pooled ranks (through a rank-sum
    table, so it stays fast for moderate group sizes).
    """
    a = np.asarray(group_a, dtype=np.float64).ravel()
    b = np.asarray(group_b, dtype=np.float64).ravel()
    if len(a) < 2 or len(b) < 2:
        raise ParameterError("each group needs at least two values")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ParameterError("groups must be finite")
    if method not in ("asymptotic", "exact"):
        raise ParameterError(f"unknown method {method!r}; use 'asymptotic' or 'exact'")
    n = len(a) + len(b)
    ranks, r_a = _rank_sums(a, b)
    _, tie_counts = np.unique(ranks, return_counts=True)
    correction = 1.0 - float(np.sum(tie_counts ** 3 - tie_counts)) / (n ** 3 - n)
    if correction <= 0:
        logger.warning("kruskal_wallis: all values identical")
        return KruskalResult(0.0, 1.0, method)
    r_b = float(ranks.sum()) - r_a
    H = (12.0 / (n * (n + 1)) * (r_a ** 2 / len(a) + r_b ** 2 / len(b)) - 3 * (n + 1)) / correction
    H = max(H, 0.0)
    if method == "exact":
        p = _exact_p(ranks, len(a), r_a)
    else:
        p = float(stats.chi2.sf(H, 1))
    return KruskalResult(float(H), min(1.0, p), method)


# --------------------------------------------------------------------------
# logistic regression

@dataclass
class LogisticModel:
    coefficients: np.ndarray  # intercept first, then one per standardized feature
    mean: np.ndarray
    scale: np.ndarray
    converged: bool
    separated: bool
    iterations: int
    loglik_history: List[float] = field(default_factory=list)
    ridge: float = 1e-6

    def linear_predictor(self, X) -> np.ndarray:
        Z = (np.asarray(X, dtype=np.float64) - self.mean) / self.scale
        return self.coefficients[0] + Z @ self.coefficients[1:]

    def predict_proba(self, X) -> np.ndarray:
        return _sigmoid(self.linear_predictor(X))

    def to_dict(self) -> dict:
        return {
            "coefficients": [float(c) for c in self.coefficients],
            "mean": [float(v) for v in self.mean],
            "scale": [float(v) for v in self.scale],
            "converged": self.converged,
            "separated": self.separated,
            "iterations": self.iterations,
            "ridge": self.ridge,
        }


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _design(features) -> np.ndarray:
    rows = [f.vector() if isinstance(f, TlcmFeatures) else np.asarray(f, dtype=np.float64)
            for f in features]
    X = np.atleast_2d(np.array(rows, dtype=np.float64))
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise ParameterError("features must be a finite (subjects, covariates) table")
    return X


def _labels(labels, n) -> np.ndarray:
    y = np.asarray(labels, dtype=np.float64).ravel()
    if len(y) != n or not np.all((y == 0) | (y == 1)):
        raise ParameterError("labels must be 0/1, one per subject")
    return y


def _penalized_loglik(beta, Z, y, ridge):
    eta = Z @ beta
    # log(1 + exp(eta)) evaluated stably
    ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
    return ll - 0.5 * ridge * float(beta @ beta)


def logistic_fit(features, labels, ridge: float = 1e-6, max_iter: int = 100,
                 tol: float = 1e-8) -> LogisticModel:
    """Ridge-damped IRLS on standardized covariates.

    Newton steps are halved until the penalized log-likelihood does not
    drop, so ``loglik_history`` never decreases.  Stops once the gradient
    norm falls below ``tol``.
    """
    X = _design(features)
    y = _labels(labels, X.shape[0])
    if min(np.count_nonzero(y == 0), np.count_nonzero(y == 1)) < 2:
        raise ParameterError("logistic_fit needs at least two subjects in each class")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    Z = np.column_stack([np.ones(len(y)), (X - mean) / scale])
    beta = np.zeros(Z.shape[1])
    penalty = ridge * np.eye(Z.shape[1])
    history = [_penalized_loglik(beta, Z, y, ridge)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        p = _sigmoid(Z @ beta)
        grad = Z.T @ (y - p) - ridge * beta
        if np.linalg.norm(grad) < tol:
            converged = True
            it -= 1
            break
        w = p * (1 - p)
        hess = Z.T @ (Z * w[:, None]) + penalty
        step = np.linalg.solve(hess, grad)
        t = 1.0
        while True:
            candidate = beta + t * step
            value = _penalized_loglik(candidate, Z, y, ridge)
            if value >= history[-1] or t < 1e-10:
                break
            t *= 0.5
        if value < history[-1]:
            break
        beta = candidate
        history.append(value)
    else:
        p = _sigmoid(Z @ beta)
        converged = bool(np.linalg.norm(Z.T @ (y - p) - ridge * beta) < tol)
    separated = bool(np.all((Z @ beta > 0) == (y == 1)))
    if separated:
        logger.info("logistic_fit: classes are linearly separated; ridge damping bounds the coefficients")
    return LogisticModel(beta, mean, scale, converged, separated, it, history, ridge)


@dataclass(frozen=True)
class LogisticEvaluation:
    accuracy: float
    roc_points: List[Tuple[float, float]]
    auc: float


def roc_curve(scores, labels) -> List[Tuple[float, float]]:
    """(FPR, TPR) points sweeping a threshold down through every distinct score."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    pos, neg = np.count_nonzero(y), np.count_nonzero(~y)
    if pos == 0 or neg == 0:
        raise ParameterError("ROC needs both classes")
    points = [(0.0, 0.0)]
    for thr in np.unique(s)[::-1]:
        sel = s >= thr
        points.append((np.count_nonzero(sel & ~y) / neg, np.count_nonzero(sel & y) / pos))
    return points


def trapezoid_auc(points) -> float:
    pts = np.asarray(points)
    return float(np.sum(np.diff(pts[:, 0]) * (pts[1:, 1] + pts[:-1, 1]) / 2))


def logistic_eval(model: LogisticModel, features, labels) -> LogisticEvaluation:
    X = _design(features)
    y = _labels(labels, X.shape[0])
    scores = model.linear_predictor(X)
    predicted = _sigmoid(scores) >= 0.5
    accuracy = float(np.mean(predicted == (y == 1)))
    points = roc_curve(scores, y)
    return LogisticEvaluation(accuracy, [(float(a), float(b)) for a, b in points], trapezoid_auc(points))


def leave_one_out_accuracy(features, labels, ridge: float = 1e-6) -> float:
    X = _design(features)
    y = _labels(labels, X.shape[0])
    hits = 0
    for i in range(len(y)):
        keep = np.arange(len(y)) != i
        model = logistic_fit(X[keep], y[keep], ridge)
        hits += int((model.predict_proba(X[i:i + 1])[0] >= 0.5) == (y[i] == 1))
    return hits / len(y)


# --------------------------------------------------------------------------
# reports

def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def features_csv(subject_ids: Sequence, table: Sequence[TlcmFeatures], labels: Sequence[int]) -> str:
    rows = [[sid] + [repr(float(getattr(f, n))) for n in FEATURE_NAMES] + [int(lab)]
            for sid, f, lab in zip(subject_ids, table, labels)]
    return _csv(["subject_id", *FEATURE_NAMES, "label"], rows)


def roc_csv(points) -> str:
    return _csv(["fpr", "tpr"], [[repr(float(a)), repr(float(b))] for a, b in points])


def model_json(model: LogisticModel, feature_names: Sequence[str] = FEATURE_NAMES) -> str:
    payload = model.to_dict()
    payload["features"] = list(feature_names)
    return json.dumps(payload, indent=2, sort_keys=True)


def features_dict(f: TlcmFeatures) -> dict:
    return asdict(f)
