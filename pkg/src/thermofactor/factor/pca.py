"""Principal component thermography and its incremental and sparse variants.

All three work on the row-centered data matrix (each pixel's temporal mean
removed) and store that mean in ``FactorModel.center``.
"""
from __future__ import annotations

import logging

import numpy as np

from ..errors import DegenerateInputError
from .model import (
    FactorModel,
    Method,
    SolverOptions,
    check_lambda,
    converged,
    fix_signs,
    prepare,
    row_center,
)

logger = logging.getLogger(__name__)

AMNESIC = 2.0


def pct(X, k: int) -> FactorModel:
    """Truncated SVD of the centered data.

    ``B`` holds the first ``k`` left singular vectors (descending singular
    value, sign fixed so each column's largest-magnitude entry is positive)
    and ``A = diag(s_k) V_k^T``.  The recorded objective is the discarded
    singular-value energy, which equals the squared reconstruction error.
    """
    values, dims = prepare(X, k)
    Xc, mean = row_center(values)
    U, s, Vt = np.linalg.svd(Xc, full_matrices=False)
    B, A = fix_signs(U[:, :k], s[:k, None] * Vt[:k])
    tail = float(np.sum(s[k:] ** 2))
    return FactorModel(
        method=Method.PCT, rank=k, basis=B, coefficients=A, dims=dims,
        objective_history=[tail], iterations_run=1, center=mean,
    )


def _is_constant(Xc: np.ndarray, values: np.ndarray) -> bool:
    scale = max(float(np.abs(values).max()), 1.0)
    return float(np.abs(Xc).max()) <= 1e-13 * scale


def ccipct(X, k: int, opts: SolverOptions = SolverOptions()) -> FactorModel:
    """Candid covariance-free incremental PCT.

    Each centered frame is presented once per pass; the pass is repeated
    ``max_iter // tau`` times (at least once).  Eigenvector estimates follow
    the amnesic CCIPCA recurrence with deflation of the sample between
    components.  The amnesic weight is held at zero until ``n > l + 1`` so
    that the old-estimate weight ``(n - 1 - l) / n`` never goes negative.
    """
    values, dims = prepare(X, k)
    Xc, mean = row_center(values)
    if _is_constant(Xc, values):
        raise DegenerateInputError("ccipct: every pixel is constant over time (zero variance)")
    n_pix, tau = Xc.shape
    passes = max(1, opts.max_iter // tau)

    V = np.zeros((n_pix, k))
    n = 0
    history = []
    for _ in range(passes):
        for j in range(tau):
            u = Xc[:, j].copy()
            n += 1
            ell = AMNESIC if n > AMNESIC + 1 else 0.0
            w_old, w_new = (n - 1 - ell) / n, (1 + ell) / n
            for i in range(min(k, n)):
                v = V[:, i]
                norm_v = np.linalg.norm(v)
                if i == n - 1 or norm_v == 0.0:
                    V[:, i] = u
                else:
                    V[:, i] = w_old * v + w_new * u * (u @ v) / norm_v
                v = V[:, i]
                norm_v = np.linalg.norm(v)
                if norm_v > 0:
                    direction = v / norm_v
                    u = u - (u @ direction) * direction
        B = _normalize(V)
        history.append(float(np.sum((Xc - B @ (B.T @ Xc)) ** 2)))

    order = np.argsort(-np.linalg.norm(V, axis=0), kind="stable")
    B = _normalize(V[:, order])
    B, _ = fix_signs(B)
    A = B.T @ Xc
    return FactorModel(
        method=Method.CCIPCT, rank=k, basis=B, coefficients=A, dims=dims,
        objective_history=history, iterations_run=n, seed=opts.seed, center=mean,
    )


def _normalize(V: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(V, axis=0)
    out = np.zeros_like(V)
    nz = norms > 0
    out[:, nz] = V[:, nz] / norms[nz]
    return out


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def sparse_pct(X, k: int, lam: float, opts: SolverOptions = SolverOptions(),
               callback=None) -> FactorModel:
    """Sparse PCT by alternating least squares with an l1 shrinkage step.

    Minimizes ``0.5 ||Xc - B A||_F^2 + lam * sum|B|``.  Starting from the PCT
    loadings, each iteration sets ``A = B^T Xc`` and updates ``B`` by
    soft-thresholding the least-squares basis ``Xc A^T (A A^T)^+`` column by
    column at ``lam / (A A^T)_jj`` (the exact shrinkage when ``A A^T`` is
    diagonal), then renormalizes the columns.  Columns shrunk to zero stay
    zero and set ``degenerate``.
    """
    lam = check_lambda(lam)
    values, dims = prepare(X, k)
    Xc, mean = row_center(values)
    U, _, _ = np.linalg.svd(Xc, full_matrices=False)
    B, _ = fix_signs(U[:, :k].copy())
    A = B.T @ Xc

    history = []
    it = 0
    for it in range(1, opts.max_iter + 1):
        G = A @ A.T
        B_ls = Xc @ A.T @ np.linalg.pinv(G)
        diag = np.diag(G).copy()
        thresholds = np.where(diag > 0, lam / np.where(diag > 0, diag, 1.0), np.inf)
        B = _normalize(soft_threshold(B_ls, thresholds[None, :]))
        A = B.T @ Xc
        obj = 0.5 * float(np.sum((Xc - B @ A) ** 2)) + lam * float(np.abs(B).sum())
        history.append(obj)
        if callback is not None:
            callback(it, B, A)
        if not B.any():
            break
        if len(history) > 1 and converged(history[-2], obj, opts.rel_tol):
            break

    degenerate = bool(np.any(~B.any(axis=0)))
    if degenerate:
        logger.warning("sparse_pct: lambda=%g shrank %d of %d basis columns to zero",
                       lam, int(np.sum(~B.any(axis=0))), k)
    return FactorModel(
        method=Method.SPARSE_PCT, rank=k, basis=B, coefficients=A, dims=dims,
        lam=lam, objective_history=history, iterations_run=it, seed=opts.seed,
        center=mean, degenerate=degenerate,
    )
