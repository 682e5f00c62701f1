"""Low-rank factorization engines sharing :class:`FactorModel`."""
from .model import (
    FactorModel,
    Init,
    Method,
    SolverOptions,
    centered_error,
    load_model,
    reconstruction_error,
    save_model,
)
from .nmf import nmf_gd, nmf_nnls, shift_to_nonnegative, sparse_nmf
from .nnls import nnls_gram
from .pca import ccipct, pct, soft_threshold, sparse_pct
from .relaxed import convex_nmf, semi_nmf
from .select import MAX_ROI_CONTRAST, select_component

__all__ = [
    "FactorModel", "Init", "Method", "SolverOptions", "MAX_ROI_CONTRAST",
    "factorize", "pct", "ccipct", "sparse_pct", "nmf_gd", "nmf_nnls", "semi_nmf",
    "convex_nmf", "sparse_nmf", "select_component", "nnls_gram", "soft_threshold",
    "shift_to_nonnegative", "reconstruction_error", "centered_error",
    "save_model", "load_model",
]


def factorize(X, method, k, lam=0.0, opts=SolverOptions(), callback=None) -> FactorModel:
    """Run ``method`` (a :class:`Method` or its name) at rank ``k``."""
    method = Method.parse(method)
    if method is Method.PCT:
        return pct(X, k)
    if method is Method.CCIPCT:
        return ccipct(X, k, opts)
    if method is Method.SPARSE_PCT:
        return sparse_pct(X, k, lam, opts, callback=callback)
    if method is Method.SPARSE_NMF:
        return sparse_nmf(X, k, lam, opts, callback=callback)
    solver = {
        Method.NMF_GD: nmf_gd,
        Method.NMF_NNLS: nmf_nnls,
        Method.SEMI_NMF: semi_nmf,
        Method.CONVEX_NMF: convex_nmf,
    }[method]
    return solver(X, k, opts, callback=callback)
