"""Thermal sequence data model, data-matrix construction, noise and file I/O.

Frames are stored as a ``(tau, N, M)`` float64 array.  The data matrix ``X``
is ``(N*M, tau)`` with column ``j`` the row-major vectorization of frame ``j``.

Binary layout of a THRM file (little-endian)::

    b"THRM" | u32 version=1 | u32 N | u32 M | u32 tau | f64 sampling_rate
    followed by tau*N*M f64 values, frame-major then row-major.

A sampling rate of 0 means "absent".
"""
from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Tuple, Union

import numpy as np

from .errors import FormatError, ParameterError

PathLike = Union[str, os.PathLike]

MAGIC = b"THRM"
VERSION = 1
_HEADER = struct.Struct("<4sIIIId")


@dataclass(frozen=True, eq=False)
class ThermalSequence:
    """A stack of ``tau`` frames of ``N x M`` temperatures.

    The frame array is copied, made read-only and checked on construction.
    """

    frames: np.ndarray
    sampling_rate: Optional[float] = None
    acquisition_duration: Optional[float] = None

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float64, copy=True)
        if frames.ndim != 3:
            raise ParameterError(f"frames must be 3-D (tau, N, M), got shape {frames.shape}")
        tau, n, m = frames.shape
        if tau < 2 or n < 1 or m < 1:
            raise ParameterError(f"need tau >= 2 and non-empty frames, got shape {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise ParameterError("frames contain non-finite values")
        if self.sampling_rate is not None and not self.sampling_rate > 0:
            raise ParameterError("sampling_rate must be positive when given")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dims(self) -> Tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    def __eq__(self, other):
        if not isinstance(other, ThermalSequence):
            return NotImplemented
        return (
            self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
            and self.sampling_rate == other.sampling_rate
        )


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """The ``(N*M, tau)`` matrix of vectorized frames."""

    values: np.ndarray
    origin_dims: Tuple[int, int]

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, copy=True)
        n, m = self.origin_dims
        if values.ndim != 2 or values.shape[0] != n * m:
            raise ParameterError(
                f"values of shape {values.shape} do not match dims {self.origin_dims}"
            )
        if not np.all(np.isfinite(values)):
            raise ParameterError("data matrix contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "origin_dims", (int(n), int(m)))

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape


def as_matrix(X) -> np.ndarray:
    """Return the raw float array behind ``X`` (DataMatrix or array-like)."""
    if isinstance(X, DataMatrix):
        return X.values
    arr = np.asarray(X, dtype=np.float64)
    if arr.ndim != 2:
        raise ParameterError(f"expected a 2-D matrix, got shape {arr.shape}")
    return arr


def vectorize(seq: ThermalSequence) -> DataMatrix:
    tau, n, m = seq.frames.shape
    return DataMatrix(seq.frames.reshape(tau, n * m).T, (n, m))


def devectorize(column, dims: Tuple[int, int]) -> np.ndarray:
    column = np.asarray(column)
    n, m = dims
    if column.ndim != 1 or column.size != n * m:
        raise ParameterError(f"column of length {column.size} cannot form a {n}x{m} image")
    return column.reshape(n, m).copy()


def to_sequence(X: DataMatrix, sampling_rate=None) -> ThermalSequence:
    n, m = X.origin_dims
    return ThermalSequence(X.values.T.reshape(-1, n, m), sampling_rate=sampling_rate)


def add_gaussian_noise(seq: ThermalSequence, percent: float, seed: int) -> ThermalSequence:
    """Add i.i.d. Gaussian noise with std ``percent * (max - min)`` of the sequence."""
    if percent < 0:
        raise ParameterError(f"noise percent must be >= 0, got {percent}")
    if percent == 0:
        return seq
    rng = np.random.default_rng(seed)
    sigma = percent * float(seq.frames.max() - seq.frames.min())
    noisy = seq.frames + rng.normal(0.0, sigma, size=seq.frames.shape)
    return ThermalSequence(noisy, seq.sampling_rate, seq.acquisition_duration)


# --------------------------------------------------------------------------
# THRM files

def _atomic_write(path: PathLike, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _pack(array: np.ndarray, sampling_rate: float) -> bytes:
    tau, n, m = array.shape
    header = _HEADER.pack(MAGIC, VERSION, n, m, tau, float(sampling_rate))
    return header + np.ascontiguousarray(array, dtype="<f8").tobytes()


def _unpack(data: bytes, source) -> Tuple[np.ndarray, float]:
    if len(data) < _HEADER.size:
        raise FormatError(f"{source}: truncated header ({len(data)} bytes)", offset=len(data))
    magic, version, n, m, tau, rate = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}", offset=0)
    if version != VERSION:
        raise FormatError(f"{source}: unsupported version {version}", offset=4)
    expected = tau * n * m * 8
    payload = data[_HEADER.size:]
    if len(payload) < expected:
        raise FormatError(
            f"{source}: truncated payload, header declares {tau} frames of {n}x{m} "
            f"({expected} bytes) but only {len(payload)} bytes follow",
            offset=len(data),
        )
    if len(payload) > expected:
        raise FormatError(
            f"{source}: {len(payload) - expected} trailing bytes after payload",
            offset=_HEADER.size + expected,
        )
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(tau, n, m)
    bad = np.flatnonzero(~np.isfinite(values.ravel()))
    if bad.size:
        raise FormatError(
            f"{source}: non-finite pixel value", offset=_HEADER.size + 8 * int(bad[0])
        )
    return values, rate


def save_sequence(seq: ThermalSequence, path: PathLike) -> None:
    _atomic_write(path, _pack(seq.frames, seq.sampling_rate or 0.0))


def load_sequence(path: PathLike) -> ThermalSequence:
    data = Path(path).read_bytes()
    frames, rate = _unpack(data, path)
    if frames.shape[0] < 2:
        raise FormatError(f"{path}: a sequence needs at least 2 frames", offset=16)
    return ThermalSequence(frames, sampling_rate=rate if rate > 0 else None)


def save_matrix(matrix: np.ndarray, path: PathLike) -> None:
    """Write a 2-D matrix as a single-frame THRM blob (rows as N, columns as M)."""
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2:
        raise ParameterError("save_matrix expects a 2-D array")
    _atomic_write(path, _pack(matrix[None], 0.0))


def load_matrix(path: PathLike) -> np.ndarray:
    values, _ = _unpack(Path(path).read_bytes(), path)
    if values.shape[0] != 1:
        raise FormatError(f"{path}: expected a single-frame matrix blob", offset=16)
    return values[0]


# --------------------------------------------------------------------------
# PGM P5

def save_mask(mask, path: PathLike) -> None:
    """Write a boolean mask as 8-bit PGM (0 background, 255 foreground)."""
    mask = np.asarray(mask, dtype=bool)
    pixels = np.where(mask, 255, 0).astype(np.uint8)
    _write_pgm(pixels, 255, path)


def save_image16(image, path: PathLike) -> None:
    """Min-max normalize ``image`` and write it as 16-bit PGM."""
    image = np.asarray(image, dtype=np.float64)
    lo, hi = float(image.min()), float(image.max())
    scaled = np.zeros_like(image) if hi == lo else (image - lo) / (hi - lo)
    _write_pgm(np.round(scaled * 65535).astype(">u2"), 65535, path)


def _write_pgm(pixels: np.ndarray, maxval: int, path: PathLike) -> None:
    n, m = pixels.shape
    header = f"P5\n{m} {n}\n{maxval}\n".encode("ascii")
    _atomic_write(path, header + pixels.tobytes())


def _pgm_tokens(data: bytes, count: int):
    tokens, pos = [], 2
    while len(tokens) < count:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header", offset=pos)
        tokens.append(int(data[start:pos]))
    return tokens, pos + 1


def load_pgm(path: PathLike) -> np.ndarray:
    """Read a binary PGM (8 or 16 bit) as an integer array."""
    data = Path(path).read_bytes()
    if data[:2] != b"P5":
        raise FormatError(f"{path}: not a P5 PGM file", offset=0)
    (m, n, maxval), pos = _pgm_tokens(data, 3)
    dtype = np.uint8 if maxval < 256 else np.dtype(">u2")
    size = n * m * np.dtype(dtype).itemsize
    if len(data) - pos < size:
        raise FormatError(f"{path}: truncated PGM payload", offset=len(data))
    return np.frombuffer(data[pos:pos + size], dtype=dtype).reshape(n, m).astype(np.int64)


def load_mask(path: PathLike) -> np.ndarray:
    return load_pgm(path) > 0
