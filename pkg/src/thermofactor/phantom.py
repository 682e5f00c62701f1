"""Finite-difference phantoms for active (flash) and passive (bioheat) thermography.

Active phantoms integrate the heat equation on a 3-D cell grid of a plate,
``(L, N, M)`` = (depth layers, rows, columns), with zero-flux boundaries
everywhere and a uniform flash flux into the front layer.  Flat-bottom holes
are cells of (near) zero conductivity.  Defect ``depth`` is the thickness of
sound material left between the front face and the hole; the hole extends
from there to the back face.

Passive phantoms integrate Pennes' bioheat equation on a 2-D surface grid.

Both use explicit Euler in conservative flux form, substepping so that
``dt <= h_min**2 * rho * c / (2 * ndim * kappa)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import SpecError
from .seqio import ThermalSequence

logger = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# conduction kernel

def face_conductivity(k: np.ndarray, axis: int) -> np.ndarray:
    """Harmonic mean of neighbouring cell conductivities along ``axis``."""
    lo = np.take(k, np.arange(k.shape[axis] - 1), axis=axis)
    hi = np.take(k, np.arange(1, k.shape[axis]), axis=axis)
    total = lo + hi
    with np.errstate(invalid="ignore", divide="ignore"):
        face = np.where(total > 0, 2 * lo * hi / np.where(total > 0, total, 1.0), 0.0)
    return face


def stable_substeps(interval: float, spacing: Sequence[float], diffusivity: float,
                    rate_limit: float = 0.0) -> int:
    """Number of explicit substeps per ``interval``.

    ``rate_limit`` is an extra linear decay rate (1/s), e.g. perfusion, whose
    step is held to half its time constant.
    """
    ndim = len(spacing)
    limits = []
    if diffusivity > 0:
        limits.append(min(spacing) ** 2 / (2 * ndim * diffusivity))
    if rate_limit > 0:
        limits.append(0.5 / rate_limit)
    if not limits:
        return 1
    return max(1, math.ceil(interval / min(limits) - 1e-12))


class Conductor:
    """Explicit conservative diffusion on a regular grid of any dimension.

    ``conductivity`` and ``heat_capacity`` (rho * c, J/(m^3 K)) are per-cell
    arrays; ``spacing`` gives the cell size along each axis.  Outer
    boundaries are insulated.
    """

    def __init__(self, conductivity, heat_capacity, spacing):
        k = np.asarray(conductivity, dtype=np.float64)
        self.heat_capacity = np.broadcast_to(np.asarray(heat_capacity, dtype=np.float64), k.shape)
        self.spacing = tuple(float(h) for h in spacing)
        if len(self.spacing) != k.ndim:
            raise SpecError("one spacing per grid axis is required")
        self.shape = k.shape
        self._faces = []
        for axis, h in enumerate(self.spacing):
            if k.shape[axis] < 2:
                self._faces.append(None)
                continue
            self._faces.append(face_conductivity(k, axis) / h ** 2)
        nonzero = k[k > 0]
        self.max_diffusivity = float(np.max(nonzero / self.heat_capacity[k > 0])) if nonzero.size else 0.0

    def flux_divergence(self, T: np.ndarray) -> np.ndarray:
        """``div(k grad T)`` per unit volume (W/m^3)."""
        out = np.zeros_like(T)
        for axis, coef in enumerate(self._faces):
            if coef is None:
                continue
            n = T.shape[axis]
            lo = [slice(None)] * T.ndim
            hi = [slice(None)] * T.ndim
            lo[axis], hi[axis] = slice(0, n - 1), slice(1, n)
            lo, hi = tuple(lo), tuple(hi)
            flux = coef * (T[hi] - T[lo])
            out[lo] += flux
            out[hi] -= flux
        return out

    def step(self, T: np.ndarray, dt: float, source: Optional[np.ndarray] = None) -> np.ndarray:
        rate = self.flux_divergence(T)
        if source is not None:
            rate += source
        return T + dt * rate / self.heat_capacity

    def run(self, T0, dt: float, n_steps: int) -> np.ndarray:
        T = np.array(T0, dtype=np.float64)
        for _ in range(n_steps):
            T = self.step(T, dt)
        return T


# --------------------------------------------------------------------------
# active phantom

@dataclass(frozen=True)
class Defect:
    """Flat-bottom hole; ``center`` (x, y), ``radius`` and ``depth`` in meters."""

    center: Tuple[float, float]
    radius: float
    depth: float
    conductivity_multiplier: float = 0.0


@dataclass(frozen=True)
class SpecimenSpec:
    width: float
    height: float
    thickness: float
    grid: Tuple[int, int, int]  # (N rows, M columns, L layers)
    conductivity: float
    density: float
    specific_heat: float
    defects: Tuple[Defect, ...] = ()
    name: str = "specimen"

    def __post_init__(self):
        object.__setattr__(self, "defects", tuple(self.defects))
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        if min(self.grid) < 1 or len(self.grid) != 3:
            raise SpecError(f"grid must be three positive sizes, got {self.grid}")
        for label, value in (("conductivity", self.conductivity), ("density", self.density),
                             ("specific_heat", self.specific_heat), ("width", self.width),
                             ("height", self.height), ("thickness", self.thickness)):
            if not value > 0:
                raise SpecError(f"{label} must be positive, got {value}")
        for i, d in enumerate(self.defects):
            x, y = d.center
            if not (d.radius > 0 and x - d.radius > 0 and x + d.radius < self.width
                    and y - d.radius > 0 and y + d.radius < self.height):
                raise SpecError(f"defect {i} does not lie strictly inside the plate")
            if not 0 < d.depth < self.thickness:
                raise SpecError(f"defect {i} depth {d.depth} not inside (0, thickness={self.thickness})")
            if d.conductivity_multiplier < 0:
                raise SpecError(f"defect {i} conductivity multiplier must be >= 0")

    @property
    def spacing(self) -> Tuple[float, float, float]:
        """(dz, dy, dx) in meters, matching the (L, N, M) array order."""
        n, m, layers = self.grid
        return self.thickness / layers, self.height / n, self.width / m

    @property
    def heat_capacity(self) -> float:
        return self.density * self.specific_heat

    @property
    def diffusivity(self) -> float:
        return self.conductivity / self.heat_capacity

    def with_grid(self, grid) -> "SpecimenSpec":
        return SpecimenSpec(self.width, self.height, self.thickness, grid, self.conductivity,
                            self.density, self.specific_heat, self.defects, self.name)

    def with_defects(self, defects) -> "SpecimenSpec":
        return SpecimenSpec(self.width, self.height, self.thickness, self.grid, self.conductivity,
                            self.density, self.specific_heat, tuple(defects), self.name)


def _surface_coords(n, m, width, height):
    ys = (np.arange(n) + 0.5) * height / n
    xs = (np.arange(m) + 0.5) * width / m
    return np.meshgrid(ys, xs, indexing="ij")


def defect_masks(spec: SpecimenSpec) -> List[np.ndarray]:
    """Front-face projection of every defect as an ``(N, M)`` boolean mask."""
    n, m, _ = spec.grid
    yy, xx = _surface_coords(n, m, spec.width, spec.height)
    return [(xx - d.center[0]) ** 2 + (yy - d.center[1]) ** 2 <= d.radius ** 2
            for d in spec.defects]


def conductivity_field(spec: SpecimenSpec) -> np.ndarray:
    n, m, layers = spec.grid
    k = np.full((layers, n, m), spec.conductivity)
    z = (np.arange(layers) + 0.5) * spec.thickness / layers
    for d, mask in zip(spec.defects, defect_masks(spec)):
        below = z > d.depth
        k[below] = np.where(mask, spec.conductivity * d.conductivity_multiplier, k[below])
    return k


def _flash_overlap(t0, t1, duration):
    return max(0.0, min(t1, duration) - max(t0, 0.0))


def simulate_active(spec: SpecimenSpec, flash_energy: float, flash_duration: float,
                    fs: float, duration: float, return_field: bool = False):
    """Pulsed-flash response of a plate.

    Returns ``(sequence, per_defect_masks, union_mask)``; frames are the
    front-layer temperature rise at ``t = (j + 1) / fs`` for ``j < round(duration * fs)``.
    With ``return_field=True`` the final 3-D temperature field is appended.
    """
    if not (fs > 0 and duration > 0 and flash_energy >= 0 and flash_duration > 0):
        raise SpecError("fs, duration and flash_duration must be positive, flash_energy >= 0")
    n_frames = int(round(duration * fs))
    if n_frames < 2:
        raise SpecError("duration * fs must give at least two frames")
    dz, dy, dx = spec.spacing
    conductor = Conductor(conductivity_field(spec), spec.heat_capacity, (dz, dy, dx))
    interval = 1.0 / fs
    n_sub = stable_substeps(interval, (dz, dy, dx), spec.diffusivity)
    dt = interval / n_sub
    flux = flash_energy / flash_duration
    capacity = spec.heat_capacity

    layers, n, m = conductor.shape
    T = np.zeros((layers, n, m))
    frames = np.empty((n_frames, n, m))
    t = 0.0
    for j in range(n_frames):
        for _ in range(n_sub):
            heat = flux * _flash_overlap(t, t + dt, flash_duration)
            T = conductor.step(T, dt)
            if heat:
                T[0] += heat / (capacity * dz)
            t += dt
        frames[j] = T[0]
    masks = defect_masks(spec)
    union = np.zeros((n, m), dtype=bool)
    for mask in masks:
        union |= mask
    seq = ThermalSequence(frames, sampling_rate=fs, acquisition_duration=n_frames / fs)
    if return_field:
        return seq, masks, union, T
    return seq, masks, union


def plate_energy(spec: SpecimenSpec, T: np.ndarray) -> float:
    dz, dy, dx = spec.spacing
    return float(spec.heat_capacity * T.sum() * dx * dy * dz)


# --------------------------------------------------------------------------
# presets

@dataclass(frozen=True)
class Acquisition:
    fs: float
    duration: float
    flash_energy: float = 1.0e4
    flash_duration: float = 5e-3


def _grid_defects(xs, ys, radii, depths):
    return tuple(Defect((x, y), r, d) for x, y, r, d in zip(xs, ys, radii, depths))


def builtin_specimens() -> Dict[str, SpecimenSpec]:
    """Plate presets named AL, PLEXI and CFRP.

    Material constants (room temperature, standard handbook values):
    aluminium alloy 6061: k = 167 W/(m K), rho = 2700 kg/m^3, c = 896 J/(kg K);
    PMMA: k = 0.19, rho = 1190, c = 1470;
    quasi-isotropic CFRP, through-thickness: k = 0.8, rho = 1600, c = 1200.

    Depths are the sound material left above each hole.  AL: 5 mm plate with
    four holes at 3.5-4.5 mm; the shallowest and deepest share one radius.
    PLEXI: 4 mm plate with six holes at 1.0-3.5 mm.  CFRP: 2 mm plate with a
    5 x 5 array, depth 0.2-1.0 mm down the rows and radius 3-7 mm across.
    """
    mm = 1e-3
    al = SpecimenSpec(
        width=64 * mm, height=64 * mm, thickness=5 * mm, grid=(64, 64, 20),
        conductivity=167.0, density=2700.0, specific_heat=896.0, name="AL",
        defects=_grid_defects(
            [16 * mm, 48 * mm, 16 * mm, 48 * mm], [16 * mm, 16 * mm, 48 * mm, 48 * mm],
            [7 * mm, 8 * mm, 6 * mm, 7 * mm], [3.5 * mm, 3.75 * mm, 4.25 * mm, 4.5 * mm]),
    )
    plexi = SpecimenSpec(
        width=96 * mm, height=64 * mm, thickness=4 * mm, grid=(64, 96, 16),
        conductivity=0.19, density=1190.0, specific_heat=1470.0, name="PLEXI",
        defects=_grid_defects(
            [16 * mm, 48 * mm, 80 * mm] * 2, [18 * mm] * 3 + [46 * mm] * 3,
            [6 * mm, 7 * mm, 8 * mm, 6 * mm, 7 * mm, 8 * mm],
            [1.0 * mm, 1.5 * mm, 2.0 * mm, 2.5 * mm, 3.0 * mm, 3.5 * mm]),
    )
    xs = [(16 + 32 * i) * mm for i in range(5)]
    cfrp_defects = []
    for row, depth in enumerate([0.2, 0.4, 0.6, 0.8, 1.0]):
        for col, radius in enumerate([3, 4, 5, 6, 7]):
            cfrp_defects.append(Defect((xs[col], xs[row]), radius * mm, depth * mm))
    cfrp = SpecimenSpec(
        width=160 * mm, height=160 * mm, thickness=2 * mm, grid=(64, 64, 20),
        conductivity=0.8, density=1600.0, specific_heat=1200.0, name="CFRP",
        defects=tuple(cfrp_defects),
    )
    return {"AL": al, "PLEXI": plexi, "CFRP": cfrp}


def recommended_acquisition(name: str) -> Acquisition:
    """Sampling settings that cover each preset's diffusion time through the plate."""
    return {
        "AL": Acquisition(fs=50.0, duration=1.0),
        "PLEXI": Acquisition(fs=1.0, duration=60.0),
        "CFRP": Acquisition(fs=5.0, duration=10.0),
    }[name.upper()]


# --------------------------------------------------------------------------
# passive (bioheat) phantom

@dataclass(frozen=True)
class Lesion:
    center: Tuple[float, float]
    radius: float
    perfusion_multiplier: float = 1.0
    metabolic_multiplier: float = 1.0


@dataclass(frozen=True, eq=False)
class BioheatSpec:
    """Surface tissue patch for Pennes' equation.

    ``surface_loss`` is a linear loss coefficient per unit volume
    (W/(m^3 K)) toward ``ambient_temp``.  ``perfusion_map`` and
    ``metabolic_map`` are optional per-pixel multipliers describing
    background heterogeneity.
    """

    grid: Tuple[int, int] = (64, 64)
    pixel_size: float = 2e-3
    conductivity: float = 0.42
    density: float = 1050.0
    specific_heat: float = 3770.0
    perfusion_rate: float = 0.54
    blood_specific_heat: float = 3770.0
    arterial_temp: float = 310.15
    metabolic_rate: float = 450.0
    lesions: Tuple[Lesion, ...] = ()
    surface_loss: float = 0.0
    ambient_temp: float = 295.15
    initial_temp: Optional[float] = None
    perfusion_map: Optional[np.ndarray] = field(default=None, repr=False)
    metabolic_map: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "lesions", tuple(self.lesions))
        object.__setattr__(self, "grid", tuple(int(g) for g in self.grid))
        n, m = self.grid
        if n < 1 or m < 1 or not self.pixel_size > 0:
            raise SpecError("grid and pixel_size must be positive")
        if self.conductivity < 0 or not (self.density > 0 and self.specific_heat > 0):
            raise SpecError("conductivity must be >= 0 and density, specific heat > 0")
        if self.perfusion_rate < 0 or self.surface_loss < 0:
            raise SpecError("perfusion_rate and surface_loss must be >= 0")
        width, height = m * self.pixel_size, n * self.pixel_size
        for i, les in enumerate(self.lesions):
            x, y = les.center
            if les.perfusion_multiplier < 1 or les.metabolic_multiplier < 1:
                raise SpecError(f"lesion {i} multipliers must be >= 1")
            if not (0 <= x <= width and 0 <= y <= height and les.radius > 0):
                raise SpecError(f"lesion {i} lies outside the grid")
        for label in ("perfusion_map", "metabolic_map"):
            value = getattr(self, label)
            if value is not None:
                value = np.asarray(value, dtype=np.float64)
                if value.shape != self.grid or (value < 0).any():
                    raise SpecError(f"{label} must be a non-negative {self.grid} array")
                object.__setattr__(self, label, value)

    @property
    def steady_temperature(self) -> float:
        """Uniform steady state without conduction, lesions or surface loss."""
        return self.arterial_temp + self.metabolic_rate / (self.perfusion_rate * self.blood_specific_heat)


def lesion_masks(spec: BioheatSpec) -> List[np.ndarray]:
    n, m = spec.grid
    yy, xx = _surface_coords(n, m, m * spec.pixel_size, n * spec.pixel_size)
    return [(xx - les.center[0]) ** 2 + (yy - les.center[1]) ** 2 <= les.radius ** 2
            for les in spec.lesions]


def simulate_passive(spec: BioheatSpec, duration: float, fs: float):
    """Integrate Pennes' equation from ``T(0) = T_a`` (or ``initial_temp``).

    Returns ``(sequence, symptomatic, lesion_mask)``; frames are sampled at
    ``t = (j + 1) / fs``.
    """
    if not (fs > 0 and duration > 0):
        raise SpecError("fs and duration must be positive")
    n_frames = int(round(duration * fs))
    if n_frames < 2:
        raise SpecError("duration * fs must give at least two frames")
    n, m = spec.grid
    perfusion = np.full((n, m), spec.perfusion_rate)
    metabolic = np.full((n, m), spec.metabolic_rate)
    if spec.perfusion_map is not None:
        perfusion = perfusion * spec.perfusion_map
    if spec.metabolic_map is not None:
        metabolic = metabolic * spec.metabolic_map
    masks = lesion_masks(spec)
    lesion = np.zeros((n, m), dtype=bool)
    for les, mask in zip(spec.lesions, masks):
        perfusion = np.where(mask, perfusion * les.perfusion_multiplier, perfusion)
        metabolic = np.where(mask, metabolic * les.metabolic_multiplier, metabolic)
        lesion |= mask

    capacity = spec.density * spec.specific_heat
    conductor = Conductor(np.full((n, m), spec.conductivity), capacity,
                          (spec.pixel_size, spec.pixel_size))
    exchange = perfusion * spec.blood_specific_heat + spec.surface_loss
    drive = perfusion * spec.blood_specific_heat * spec.arterial_temp + metabolic \
        + spec.surface_loss * spec.ambient_temp
    interval = 1.0 / fs
    n_sub = stable_substeps(interval, (spec.pixel_size, spec.pixel_size),
                            spec.conductivity / capacity, float(exchange.max()) / capacity)
    dt = interval / n_sub

    start = spec.arterial_temp if spec.initial_temp is None else spec.initial_temp
    T = np.full((n, m), float(start))
    frames = np.empty((n_frames, n, m))
    for j in range(n_frames):
        for _ in range(n_sub):
            T = conductor.step(T, dt, source=drive - exchange * T)
        frames[j] = T
    seq = ThermalSequence(frames, sampling_rate=fs, acquisition_duration=n_frames / fs)
    return seq, bool(spec.lesions), lesion


def smooth_field(rng: np.random.Generator, shape, correlation_px: float, amplitude: float) -> np.ndarray:
    """Positive multiplier field ``1 + amplitude * g`` with ``g`` smoothed unit noise."""
    from scipy.ndimage import gaussian_filter

    g = gaussian_filter(rng.normal(size=shape), correlation_px, mode="reflect")
    g /= max(float(g.std()), 1e-300)
    return np.clip(1.0 + amplitude * g, 0.05, None)


def random_subject(rng: np.random.Generator, symptomatic: bool, grid=(64, 64),
                   pixel_size: float = 2e-3, heterogeneity: float = 0.15,
                   **overrides) -> BioheatSpec:
    """Draw one screening subject with smooth perfusion/metabolic heterogeneity.

    Symptomatic subjects carry one lesion (radius 6-12 mm, scaled down on
    patches smaller than 64 mm) with elevated
    perfusion (x2-3) and metabolism (x20-40).
    """
    n, m = grid
    perfusion_map = smooth_field(rng, grid, 4.0, heterogeneity)
    metabolic_map = smooth_field(rng, grid, 4.0, heterogeneity)
    lesions = ()
    if symptomatic:
        side = min(n, m) * pixel_size
        radius = rng.uniform(6e-3, 12e-3) * min(1.0, side / 64e-3)
        margin = radius + min(4 * pixel_size, side / 8)
        cx = rng.uniform(margin, m * pixel_size - margin)
        cy = rng.uniform(margin, n * pixel_size - margin)
        lesions = (Lesion((cx, cy), radius, rng.uniform(2.0, 3.0), rng.uniform(20.0, 40.0)),)
    params = dict(grid=grid, pixel_size=pixel_size, lesions=lesions,
                  perfusion_map=perfusion_map, metabolic_map=metabolic_map,
                  surface_loss=2000.0, initial_temp=306.15)
    params.update(overrides)
    return BioheatSpec(**params)
