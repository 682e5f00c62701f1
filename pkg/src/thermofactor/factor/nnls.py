"""Active-set non-negative least squares for many right-hand sides.

Solves ``min_x ||C x - a||^2, x >= 0`` for every column ``a`` of a matrix,
given only the Gram quantities ``CtC = C^T C`` and ``CtA = C^T [a_1 ... a_n]``.
This is the Lawson-Hanson active-set method arranged as in the fast
combinatorial variant of Van Benthem and Keenan: columns whose passive sets
coincide share one Cholesky-sized solve, which keeps the per-iteration cost
of alternating NNLS factorizations at a handful of small ``k x k`` solves.
"""
from __future__ import annotations

import logging

import numpy as np

logger = logging.getLogger(__name__)


def _solve(G: np.ndarray, R: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.solve(G, R)
    except np.linalg.LinAlgError:
        return np.linalg.lstsq(G, R, rcond=None)[0]


def _passive_solve(CtC, CtA, passive):
    """Least squares restricted to each column's passive variables."""
    K = np.zeros_like(CtA)
    if CtA.shape[1] == 0:
        return K
    patterns, inverse = np.unique(passive.T, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    for g, pattern in enumerate(patterns):
        if not pattern.any():
            continue
        cols = np.flatnonzero(inverse == g)
        idx = np.flatnonzero(pattern)
        K[np.ix_(idx, cols)] = _solve(CtC[np.ix_(idx, idx)], CtA[np.ix_(idx, cols)])
    return K


def nnls_gram(CtC, CtA, tol=None, max_outer=None):
    """Non-negative least squares from Gram quantities.

    Parameters
    ----------
    CtC : (k, k) array
        ``C^T C``; symmetric positive semi-definite.
    CtA : (k,) or (k, n) array
        ``C^T a`` for one or several right-hand sides.
    tol : float, optional
        Optimality tolerance on the negative gradient ``CtA - CtC x`` of the
        zero (active) variables.  Defaults to a scale-relative multiple of
        machine epsilon.
    max_outer : int, optional
        Cap on outer active-set iterations; defaults to ``30 * k``.

    Returns
    -------
    x : array shaped like ``CtA``, all entries ``>= 0``.
    """
    CtC = np.asarray(CtC, dtype=np.float64)
    CtA = np.asarray(CtA, dtype=np.float64)
    vector = CtA.ndim == 1
    if vector:
        CtA = CtA[:, None]
    k, n = CtA.shape
    if CtC.shape != (k, k):
        raise ValueError(f"CtC shape {CtC.shape} does not match CtA shape {CtA.shape}")
    if tol is None:
        scale = max(float(np.abs(CtA).max(initial=0.0)), float(np.abs(CtC).max(initial=0.0)), 1e-300)
        tol = 1e4 * k * np.finfo(np.float64).eps * scale
    if max_outer is None:
        max_outer = 30 * k

    # unconstrained solution gives the initial passive set
    K = _solve(CtC, CtA) if k else np.zeros_like(CtA)
    passive = K > 0
    K[~passive] = 0.0
    D = K.copy()
    pending = np.flatnonzero(~passive.all(axis=0))

    outer = 0
    while pending.size:
        outer += 1
        if outer > max_outer:
            logger.warning("nnls: %d columns not optimal after %d outer iterations",
                           pending.size, max_outer)
            break
        K[:, pending] = _passive_solve(CtC, CtA[:, pending], passive[:, pending])
        infeasible = pending[(K[:, pending] < 0).any(axis=0)]

        # step back toward the last feasible iterate until feasible again
        for _ in range(k + 1):
            if not infeasible.size:
                break
            Kh, Dh, Ph = K[:, infeasible], D[:, infeasible], passive[:, infeasible]
            neg = Ph & (Kh < 0)
            alpha = np.full(Kh.shape, np.inf)
            alpha[neg] = Dh[neg] / (Dh[neg] - Kh[neg])
            arg = alpha.argmin(axis=0)
            step = np.clip(alpha[arg, np.arange(arg.size)], 0.0, 1.0)
            Dh = Dh - step * (Dh - Kh)
            Dh[arg, np.arange(arg.size)] = 0.0
            Ph[arg, np.arange(arg.size)] = False
            # variables pushed to (numerically) zero leave the passive set too
            Ph &= Dh > 0
            Dh[~Ph] = 0.0
            D[:, infeasible] = Dh
            passive[:, infeasible] = Ph
            K[:, infeasible] = _passive_solve(CtC, CtA[:, infeasible], Ph)
            infeasible = infeasible[(K[:, infeasible] < 0).any(axis=0)]
        if infeasible.size:
            K[:, infeasible] = np.maximum(K[:, infeasible], 0.0)

        grad = CtA[:, pending] - CtC @ K[:, pending]
        candidates = np.where(passive[:, pending], -np.inf, grad)
        best = candidates.argmax(axis=0)
        not_optimal = candidates[best, np.arange(best.size)] > tol
        pending = pending[not_optimal]
        if pending.size:
            passive[best[not_optimal], pending] = True
            D[:, pending] = K[:, pending]
    K = np.maximum(K, 0.0)
    return K[:, 0] if vector else K
