"""Result type, solver options and helpers shared by every factorization."""
from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .. import seqio
from ..errors import FormatError, ParameterError

logger = logging.getLogger(__name__)


class Method(str, enum.Enum):
    PCT = "pct"
    CCIPCT = "ccipct"
    SPARSE_PCT = "sparse_pct"
    NMF_GD = "nmf_gd"
    NMF_NNLS = "nmf_nnls"
    SEMI_NMF = "semi_nmf"
    CONVEX_NMF = "convex_nmf"
    SPARSE_NMF = "sparse_nmf"

    @classmethod
    def parse(cls, name) -> "Method":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        try:
            return cls(key)
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ParameterError(f"unknown method {name!r}; valid methods: {valid}") from None

    @property
    def requires_nonnegative(self) -> bool:
        return self in (Method.NMF_GD, Method.NMF_NNLS, Method.SPARSE_NMF)

    @property
    def penalized(self) -> bool:
        return self in (Method.SPARSE_PCT, Method.SPARSE_NMF)

    @property
    def centered(self) -> bool:
        return self in (Method.PCT, Method.CCIPCT, Method.SPARSE_PCT)


class Init(str, enum.Enum):
    RANDOM_UNIFORM = "random_uniform"
    KMEANS = "kmeans"


@dataclass(frozen=True)
class SolverOptions:
    max_iter: int = 500
    rel_tol: float = 1e-6
    init: Init = Init.RANDOM_UNIFORM
    seed: int = 0
    epsilon_guard: float = 1e-12

    def __post_init__(self):
        object.__setattr__(self, "init", Init(self.init))
        if self.max_iter < 1:
            raise ParameterError("max_iter must be >= 1")
        if not self.rel_tol > 0:
            raise ParameterError("rel_tol must be > 0")
        if not self.epsilon_guard > 0:
            raise ParameterError("epsilon_guard must be > 0")


@dataclass
class FactorModel:
    """Outcome of a rank-``k`` factorization ``X ~ B @ A``.

    For the centered methods (PCT family) ``B @ A`` approximates the
    row-centered data and ``center`` holds the removed per-pixel means.
    For convex-NMF ``mixing`` is the ``W`` with ``B = X @ W``.
    ``degenerate`` flags over-shrunk solutions with all-zero basis columns.
    """

    method: Method
    rank: int
    basis: np.ndarray
    coefficients: np.ndarray
    dims: Tuple[int, int]
    mixing: Optional[np.ndarray] = None
    lam: Optional[float] = None
    objective_history: List[float] = field(default_factory=list)
    iterations_run: int = 0
    seed: int = 0
    center: Optional[np.ndarray] = None
    degenerate: bool = False

    def reconstruct(self) -> np.ndarray:
        approx = self.basis @ self.coefficients
        if self.center is not None:
            approx = approx + self.center[:, None]
        return approx

    def component_image(self, i: int) -> np.ndarray:
        return seqio.devectorize(self.basis[:, i], self.dims)

    def metadata(self) -> dict:
        return {
            "method": self.method.value,
            "k": self.rank,
            "lambda": self.lam,
            "seed": self.seed,
            "iterations": self.iterations_run,
            "degenerate": self.degenerate,
            "dims": list(self.dims),
            "objective_history": [float(v) for v in self.objective_history],
        }


def reconstruction_error(X, model: FactorModel) -> float:
    """Squared Frobenius error of ``model`` on the data it was fit to."""
    return float(np.sum((seqio.as_matrix(X) - model.reconstruct()) ** 2))


def centered_error(X, model: FactorModel) -> float:
    """Frobenius norm of the row-centered residual.

    Row-centering a rank-``k`` approximation keeps rank ``<= k``, so this is
    bounded below by the PCT error at the same rank for every method.
    """
    resid = seqio.as_matrix(X) - model.reconstruct()
    resid = resid - resid.mean(axis=1, keepdims=True)
    return float(np.linalg.norm(resid))


# --------------------------------------------------------------------------
# shared plumbing for the solvers

def prepare(X, k: int) -> Tuple[np.ndarray, Tuple[int, int]]:
    if isinstance(X, seqio.DataMatrix):
        values, dims = X.values, X.origin_dims
    else:
        values = seqio.as_matrix(X)
        if not np.all(np.isfinite(values)):
            raise ParameterError("data matrix contains non-finite values")
        dims = (values.shape[0], 1)
    n_rows, n_cols = values.shape
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= min(n_rows, n_cols):
        raise ParameterError(f"rank k={k} outside [1, {min(n_rows, n_cols)}]")
    return np.array(values, dtype=np.float64), dims


def check_lambda(lam) -> float:
    lam = float(lam)
    if not lam >= 0:
        raise ParameterError(f"lambda must be >= 0, got {lam}")
    return lam


def row_center(X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=1)
    return X - mean[:, None], mean


def fix_signs(B: np.ndarray, A: Optional[np.ndarray] = None):
    """Flip columns of ``B`` so that the largest-magnitude entry is positive."""
    if B.size == 0:
        return B, A
    idx = np.argmax(np.abs(B), axis=0)
    signs = np.sign(B[idx, np.arange(B.shape[1])])
    signs[signs == 0] = 1.0
    B = B * signs
    if A is not None:
        A = A * signs[:, None]
    return B, A


def positive_part(M: np.ndarray) -> np.ndarray:
    return (np.abs(M) + M) / 2


def negative_part(M: np.ndarray) -> np.ndarray:
    return (np.abs(M) - M) / 2


def converged(previous: float, current: float, rel_tol: float) -> bool:
    if current == 0.0:
        return True
    return abs(previous - current) < rel_tol * max(abs(previous), np.finfo(float).tiny)


def random_factors(X: np.ndarray, k: int, rng: np.random.Generator):
    """Uniform(0, 1) factors scaled by ``sqrt(mean(|X|) / k)``."""
    scale = np.sqrt(max(float(np.mean(np.abs(X))), np.finfo(float).tiny) / k)
    B = rng.uniform(0.0, 1.0, size=(X.shape[0], k)) * scale
    A = rng.uniform(0.0, 1.0, size=(k, X.shape[1])) * scale
    return B, A


def kmeans_labels(X: np.ndarray, k: int, seed: int) -> np.ndarray:
    """Cluster the columns of ``X`` into ``k`` groups."""
    from scipy.cluster.vq import kmeans2

    labels = None
    best = np.inf
    rng = np.random.default_rng(seed)
    for _ in range(5):
        centroids, lab = kmeans2(X.T, k, minit="++", seed=rng, missing="warn")
        inertia = float(np.sum((X.T - centroids[lab]) ** 2))
        if inertia < best:
            best, labels = inertia, lab
    return labels


def membership(labels: np.ndarray, k: int) -> np.ndarray:
    H = np.zeros((labels.size, k))
    H[np.arange(labels.size), labels] = 1.0
    return H


# --------------------------------------------------------------------------
# serialization

def save_model(model: FactorModel, directory, stem: str = "model") -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    seqio.save_matrix(model.basis, directory / f"{stem}_B.thrm")
    seqio.save_matrix(model.coefficients, directory / f"{stem}_A.thrm")
    if model.mixing is not None:
        seqio.save_matrix(model.mixing, directory / f"{stem}_W.thrm")
    if model.center is not None:
        seqio.save_matrix(model.center[:, None], directory / f"{stem}_center.thrm")
    meta_path = directory / f"{stem}.json"
    seqio._atomic_write(meta_path, (json.dumps(model.metadata(), indent=2) + "\n").encode())
    return meta_path


def load_model(directory, stem: str = "model") -> FactorModel:
    directory = Path(directory)
    meta = json.loads((directory / f"{stem}.json").read_text())
    try:
        method = Method.parse(meta["method"])
    except (KeyError, ParameterError) as exc:
        raise FormatError(f"{directory / stem}.json: bad metadata ({exc})") from None
    W_path = directory / f"{stem}_W.thrm"
    c_path = directory / f"{stem}_center.thrm"
    return FactorModel(
        method=method,
        rank=int(meta["k"]),
        basis=seqio.load_matrix(directory / f"{stem}_B.thrm"),
        coefficients=seqio.load_matrix(directory / f"{stem}_A.thrm"),
        dims=tuple(meta["dims"]),
        mixing=seqio.load_matrix(W_path) if W_path.exists() else None,
        lam=meta.get("lambda"),
        objective_history=list(meta["objective_history"]),
        iterations_run=int(meta["iterations"]),
        seed=int(meta["seed"]),
        center=seqio.load_matrix(c_path)[:, 0] if c_path.exists() else None,
        degenerate=bool(meta.get("degenerate", False)),
    )
