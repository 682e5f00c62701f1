"""Semi-NMF and convex-NMF: factorizations with relaxed sign constraints.

Both use the positive/negative-part multiplicative rules of Ding, Li and
Jordan, which never increase ``||X - BA||_F^2`` and need no step size.
``M+ = (|M| + M) / 2`` and ``M- = (|M| - M) / 2``.
"""
from __future__ import annotations

import numpy as np

from .model import (
    FactorModel,
    Init,
    Method,
    SolverOptions,
    converged,
    kmeans_labels,
    membership,
    negative_part,
    positive_part,
    prepare,
    random_factors,
)


def semi_nmf(X, k: int, opts: SolverOptions = SolverOptions(), callback=None) -> FactorModel:
    """Semi-NMF: ``A >= 0``, ``B`` unconstrained; ``X`` may hold negatives.

    ``B`` is the exact least-squares solution ``X A^T (A A^T)^+`` and ``A``
    follows the square-root multiplicative rule.
    """
    values, dims = prepare(X, k)
    eps = opts.epsilon_guard
    rng = np.random.default_rng(opts.seed)
    if opts.init is Init.KMEANS:
        A = (membership(kmeans_labels(values, k, opts.seed), k) + 0.2).T
    else:
        _, A = random_factors(values, k, rng)

    history = []
    it = 0
    B = np.zeros((values.shape[0], k))
    for it in range(1, opts.max_iter + 1):
        B = values @ A.T @ np.linalg.pinv(A @ A.T)
        XtB = values.T @ B
        BtB = B.T @ B
        G = A.T
        numer = positive_part(XtB) + G @ negative_part(BtB)
        denom = negative_part(XtB) + G @ positive_part(BtB) + eps
        A = (G * np.sqrt(numer / denom)).T
        obj = float(np.sum((values - B @ A) ** 2))
        history.append(obj)
        if callback is not None:
            callback(it, B, A)
        if len(history) > 1 and converged(history[-2], obj, opts.rel_tol):
            break
    return FactorModel(
        method=Method.SEMI_NMF, rank=k, basis=B, coefficients=A, dims=dims,
        objective_history=history, iterations_run=it, seed=opts.seed,
    )


def convex_nmf(X, k: int, opts: SolverOptions = SolverOptions(), callback=None) -> FactorModel:
    """Convex-NMF: ``X ~ X W A`` with ``W >= 0`` (tau x k) and ``A >= 0``.

    Updates run on the Gram matrix ``Y = X^T X`` split into ``Y+`` and
    ``Y-``; the basis is returned as ``B = X @ W``.

    KMEANS init follows the cluster-indicator construction: with ``H`` the
    k-means membership of the columns of ``X``, ``A = (H + 0.2)^T`` and
    ``W = (H + 0.2) / cluster_size``.  RANDOM_UNIFORM draws ``W`` uniform
    with columns summing to one (so ``X W`` is a weighted mean of frames)
    and ``A`` uniform.
    """
    values, dims = prepare(X, k)
    eps = opts.epsilon_guard
    Y = values.T @ values
    Yp, Yn = positive_part(Y), negative_part(Y)

    if opts.init is Init.KMEANS:
        H = membership(kmeans_labels(values, k, opts.seed), k)
        W = (H + 0.2) / np.maximum(H.sum(axis=0), 1.0)
        G = H + 0.2
    else:
        rng = np.random.default_rng(opts.seed)
        W = rng.uniform(0.0, 1.0, size=(values.shape[1], k))
        W /= W.sum(axis=0)
        G = rng.uniform(0.0, 1.0, size=(values.shape[1], k))

    history = []
    it = 0
    for it in range(1, opts.max_iter + 1):
        YpW, YnW = Yp @ W, Yn @ W
        G *= np.sqrt((YpW + G @ (W.T @ YnW)) / (YnW + G @ (W.T @ YpW) + eps))
        GtG = G.T @ G
        W *= np.sqrt((Yp @ G + YnW @ GtG) / (Yn @ G + YpW @ GtG + eps))
        obj = float(np.sum((values - (values @ W) @ G.T) ** 2))
        history.append(obj)
        if callback is not None:
            callback(it, values @ W, G.T, W)
        if len(history) > 1 and converged(history[-2], obj, opts.rel_tol):
            break
    return FactorModel(
        method=Method.CONVEX_NMF, rank=k, basis=values @ W, coefficients=G.T.copy(),
        dims=dims, mixing=W, objective_history=history, iterations_run=it, seed=opts.seed,
    )
