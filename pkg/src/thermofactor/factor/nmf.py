"""Non-negative factorizations: multiplicative (with optional l1 basis penalty)
and alternating exact NNLS."""
from __future__ import annotations

import logging

import numpy as np

from ..errors import DomainError
from .model import (
    FactorModel,
    Init,
    Method,
    SolverOptions,
    check_lambda,
    converged,
    kmeans_labels,
    membership,
    prepare,
    random_factors,
)
from .nnls import nnls_gram

logger = logging.getLogger(__name__)


def require_nonnegative(X: np.ndarray, method: str) -> None:
    if X.min() < 0:
        raise DomainError(
            f"{method} needs a non-negative data matrix (min entry {X.min():.6g}); "
            "shift the data first, e.g. with factor.shift_to_nonnegative"
        )


def shift_to_nonnegative(X):
    """Subtract the global minimum when it is negative."""
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    lo = X.min()
    return X - lo if lo < 0 else X


def _initial_factors(X, k, opts):
    rng = np.random.default_rng(opts.seed)
    B, A = random_factors(X, k, rng)
    if opts.init is Init.KMEANS:
        labels = kmeans_labels(X, k, opts.seed)
        H = membership(labels, k)
        A = (H + 0.2).T
        B = np.maximum(X @ H / np.maximum(H.sum(axis=0), 1.0), 0.0) + 1e-3 * B
    return B, A


def _multiplicative(X, k, lam, opts, method, callback):
    B, A = _initial_factors(X, k, opts)
    eps = opts.epsilon_guard
    half = 0.5 if method is Method.SPARSE_NMF else 1.0
    if lam > 0:
        B, A = _normalize_rows(B, A)
    history = []
    it = 0
    for it in range(1, opts.max_iter + 1):
        B *= (X @ A.T) / (B @ (A @ A.T) + lam + eps)
        if lam > 0:
            # majorizer of lam * ||b_j||_1 * ||a_j||_2 around the current (unit) rows
            row_norm = np.linalg.norm(A, axis=1)
            weight = lam * B.sum(axis=0) / np.maximum(row_norm, np.finfo(float).tiny)
            A *= (B.T @ X) / ((B.T @ B) @ A + weight[:, None] * A + eps)
            B, A = _normalize_rows(B, A)
        else:
            A *= (B.T @ X) / ((B.T @ B) @ A + eps)
        obj = half * float(np.sum((X - B @ A) ** 2)) + lam * float(B.sum())
        history.append(obj)
        if callback is not None:
            callback(it, B, A)
        if len(history) > 1 and converged(history[-2], obj, opts.rel_tol):
            break
    return B, A, history, it


def _normalize_rows(B, A):
    """Rescale rows of ``A`` to unit norm, compensating the columns of ``B``."""
    norms = np.linalg.norm(A, axis=1)
    scale = np.where(norms > 0, norms, 1.0)
    return B * scale, A / scale[:, None]


def lasso_basis(X, A, lam):
    """Exact minimizer of ``0.5 ||X - BA||^2 + lam * sum(B)`` over ``B >= 0``."""
    return nnls_gram(A @ A.T, A @ X.T - lam).T


def nmf_gd(X, k: int, opts: SolverOptions = SolverOptions(), callback=None) -> FactorModel:
    """Lee-Seung multiplicative updates for ``min ||X - BA||_F^2, B, A >= 0``."""
    values, dims = prepare(X, k)
    require_nonnegative(values, "nmf_gd")
    B, A, history, it = _multiplicative(values, k, 0.0, opts, Method.NMF_GD, callback)
    return FactorModel(
        method=Method.NMF_GD, rank=k, basis=B, coefficients=A, dims=dims,
        objective_history=history, iterations_run=it, seed=opts.seed,
    )


def sparse_nmf(X, k: int, lam: float, opts: SolverOptions = SolverOptions(),
               callback=None) -> FactorModel:
    """NMF with an l1 penalty on the basis.

    Minimizes ``0.5 ||X - BA||_F^2 + lam * ||B||_1`` with ``B, A >= 0``.

    The penalty alone is not scale invariant: shrinking ``B`` while growing
    ``A`` lowers it forever, so the plain problem has no minimizer.  The
    iteration therefore works on ``0.5 ||X - BA||^2 + lam * sum_j
    ||b_j||_1 ||a_j||_2`` and keeps the rows of ``A`` at unit norm, where the
    two objectives agree.  The basis update ``B <- B * (X A^T) / (B A A^T +
    lam + eps)`` is the majorize-minimize step of the non-negative LASSO;
    the coefficient update adds the quadratic majorizer of the row-norm
    term to the Lee-Seung denominator.  Both steps and the normalization
    never increase the objective.  On exit ``B`` is replaced by the exact
    non-negative LASSO solution for the final ``A`` (one more, never larger,
    objective value is appended), which makes its zeros exact.

    With ``lam = 0`` none of this applies and the iterates are those of
    :func:`nmf_gd` (the recorded objective is half of it).
    """
    lam = check_lambda(lam)
    values, dims = prepare(X, k)
    require_nonnegative(values, "sparse_nmf")
    B, A, history, it = _multiplicative(values, k, lam, opts, Method.SPARSE_NMF, callback)
    if lam > 0:
        B = lasso_basis(values, A, lam)
        history.append(0.5 * float(np.sum((values - B @ A) ** 2)) + lam * float(B.sum()))
    degenerate = bool(np.any(~(B > 0).any(axis=0)))
    if degenerate:
        logger.warning("sparse_nmf: lambda=%g left an all-zero basis column", lam)
    return FactorModel(
        method=Method.SPARSE_NMF, rank=k, basis=B, coefficients=A, dims=dims,
        lam=lam, objective_history=history, iterations_run=it, seed=opts.seed,
        degenerate=degenerate,
    )


def nmf_nnls(X, k: int, opts: SolverOptions = SolverOptions(), callback=None) -> FactorModel:
    """Alternating non-negative least squares.

    Starting from the same initial ``B`` as :func:`nmf_gd`, each iteration
    solves every column of ``A`` exactly with ``B`` fixed, then every row of
    ``B`` with ``A`` fixed, both by the active-set solver.
    """
    values, dims = prepare(X, k)
    require_nonnegative(values, "nmf_nnls")
    B, A = _initial_factors(values, k, opts)
    Xt = values.T
    history = []
    it = 0
    for it in range(1, opts.max_iter + 1):
        A = nnls_gram(B.T @ B, B.T @ values)
        B = nnls_gram(A @ A.T, A @ Xt).T
        obj = float(np.sum((values - B @ A) ** 2))
        history.append(obj)
        if callback is not None:
            callback(it, B, A)
        if len(history) > 1 and converged(history[-2], obj, opts.rel_tol):
            break
    return FactorModel(
        method=Method.NMF_NNLS, rank=k, basis=B, coefficients=A, dims=dims,
        objective_history=history, iterations_run=it, seed=opts.seed,
        degenerate=bool(np.any(~(B > 0).any(axis=0))),
    )
