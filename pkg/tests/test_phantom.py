import math

import numpy as np
import pytest

from thermofactor import phantom as ph
from thermofactor.errors import SpecError

mm = 1e-3


def small_plate(grid=(16, 16, 8), defects=None):
    if defects is None:
        defects = (ph.Defect((8 * mm, 8 * mm), 4 * mm, 1 * mm),
                   ph.Defect((24 * mm, 20 * mm), 5 * mm, 2 * mm))
    return ph.SpecimenSpec(32 * mm, 32 * mm, 4 * mm, grid, 0.19, 1190.0, 1470.0, defects)


def test_rod_cosine_mode_decays_analytically():
    # insulated rod: cos(pi z / L) is the slowest decaying mode, exp(-alpha pi^2 t / L^2)
    L, length, k, rc = 50, 0.01, 1.0, 1.0e6
    alpha, dz = k / rc, length / L
    z = (np.arange(L) + 0.5) * dz
    c = ph.Conductor(np.full((L, 1, 1), k), rc, (dz, 1.0, 1.0))
    t_half = math.log(2) * length ** 2 / (alpha * math.pi ** 2)
    n = ph.stable_substeps(t_half, (dz, 1.0, 1.0), alpha)
    T = c.run(np.cos(np.pi * z / length).reshape(L, 1, 1), t_half / n, n)[:, 0, 0]
    exact = np.cos(np.pi * z / length) * math.exp(-alpha * math.pi ** 2 * t_half / length ** 2)
    assert np.max(np.abs(T - exact)) <= 0.01 * 0.5


def test_substep_bound():
    n = ph.stable_substeps(1.0, (1e-3, 2e-3, 2e-3), 1e-4)
    assert 1.0 / n <= (1e-3) ** 2 / (6 * 1e-4) * (1 + 1e-12)
    assert 1.0 / (n - 1) > (1e-3) ** 2 / (6 * 1e-4)


def test_face_conductivity_harmonic_and_void():
    k = np.array([1.0, 3.0, 0.0])
    np.testing.assert_allclose(ph.face_conductivity(k, 0), [1.5, 0.0])


def test_energy_conserved_after_flash():
    spec = small_plate()
    E = 1.0e4
    for fs, duration in [(1.0, 10.0), (5.0, 3.0)]:
        seq, _, _, T = ph.simulate_active(spec, E, 5e-3, fs, duration, return_field=True)
        total = E * spec.width * spec.height
        assert abs(ph.plate_energy(spec, T) - total) <= 1e-4 * total


def test_flash_longer_than_substep_deposits_exact_energy():
    spec = small_plate(defects=())
    E = 2.0e3
    _, _, _, T = ph.simulate_active(spec, E, 0.37, 1.0, 2.0, return_field=True)
    total = E * spec.width * spec.height
    assert abs(ph.plate_energy(spec, T) - total) <= 1e-10 * total


def test_maximum_principle_after_flash():
    spec = small_plate()
    seq = ph.simulate_active(spec, 1.0e4, 5e-3, 1.0, 20.0)[0]
    peaks = seq.frames.reshape(seq.n_frames, -1).max(axis=1)
    assert np.all(np.diff(peaks) <= 1e-12)
    assert seq.frames.min() >= 0


def test_maximum_principle_full_field():
    spec = small_plate(grid=(8, 8, 6))
    dz, dy, dx = spec.spacing
    c = ph.Conductor(ph.conductivity_field(spec), spec.heat_capacity, (dz, dy, dx))
    T = np.random.default_rng(0).uniform(size=c.shape)
    n = ph.stable_substeps(1.0, (dz, dy, dx), spec.diffusivity)
    for _ in range(20):
        nxt = c.step(T, 1.0 / n)
        assert nxt.max() <= T.max() + 1e-15 and nxt.min() >= T.min() - 1e-15
        T = nxt


def test_grid_refinement_converges():
    spec = small_plate(grid=(32, 32, 16))
    coarse = ph.simulate_active(spec, 1e4, 5e-3, 1.0, 40.0)[0].frames[-1]
    fine = ph.simulate_active(spec.with_grid((64, 64, 32)), 1e4, 5e-3, 1.0, 40.0)[0].frames[-1]
    fine = fine.reshape(32, 2, 32, 2).mean(axis=(1, 3))
    rms = np.sqrt(np.mean((coarse - fine) ** 2)) / np.sqrt(np.mean(fine ** 2))
    assert rms <= 0.02


def test_deterministic():
    spec = small_plate()
    a = ph.simulate_active(spec, 1e4, 5e-3, 1.0, 5.0)[0]
    b = ph.simulate_active(spec, 1e4, 5e-3, 1.0, 5.0)[0]
    assert a.frames.tobytes() == b.frames.tobytes()


def test_defect_warmer_and_shallow_beats_deep():
    spec = small_plate()
    seq, masks, union = ph.simulate_active(spec, 1e4, 5e-3, 1.0, 40.0)
    sound = seq.frames[:, ~union].mean(axis=1)
    contrast = [(seq.frames[:, m].mean(axis=1) - sound).max() for m in masks]
    assert contrast[0] > contrast[1] > 0


def test_masks_and_frame_count():
    spec = small_plate()
    seq, masks, union = ph.simulate_active(spec, 1e4, 5e-3, 2.0, 3.0)
    assert seq.n_frames == 6 and seq.dims == (16, 16)
    assert seq.sampling_rate == 2.0
    assert len(masks) == 2 and union.dtype == bool
    assert np.array_equal(union, masks[0] | masks[1])
    assert not (masks[0] & masks[1]).any()


def test_defect_occupies_cells_below_depth():
    spec = small_plate(grid=(16, 16, 8))  # dz = 0.5 mm
    k = ph.conductivity_field(spec)
    center = (4, 4)  # inside defect 0, depth 1 mm
    col = k[:, center[0], center[1]]
    assert np.all(col[:2] == spec.conductivity) and np.all(col[2:] == 0)


@pytest.mark.parametrize("defect", [
    ph.Defect((2 * mm, 16 * mm), 4 * mm, 1 * mm),     # pokes out of the plate
    ph.Defect((16 * mm, 16 * mm), 4 * mm, 4 * mm),    # depth == thickness
    ph.Defect((16 * mm, 16 * mm), 4 * mm, 5 * mm),
    ph.Defect((16 * mm, 16 * mm), 4 * mm, 0.0),
])
def test_impossible_geometry_rejected(defect):
    with pytest.raises(SpecError):
        small_plate(defects=(defect,))


def test_bad_material_rejected():
    with pytest.raises(SpecError):
        ph.SpecimenSpec(0.03, 0.03, 0.004, (8, 8, 4), -1.0, 1000, 1000)


def test_presets():
    presets = ph.builtin_specimens()
    al, plexi, cfrp = presets["AL"], presets["PLEXI"], presets["CFRP"]
    assert len(al.defects) == 4
    assert all(3.5 * mm - 1e-12 <= d.depth <= 4.5 * mm + 1e-12 for d in al.defects)
    assert len(plexi.defects) == 6 and plexi.thickness == pytest.approx(4 * mm)
    assert len(cfrp.defects) == 25
    assert all(0.2 * mm - 1e-12 <= d.depth <= 1.0 * mm + 1e-12 for d in cfrp.defects)
    assert len({d.radius for d in cfrp.defects}) > 1
    for name in presets:
        acq = ph.recommended_acquisition(name)
        assert acq.fs > 0 and acq.duration > 0


def test_passive_steady_state():
    spec = ph.BioheatSpec(grid=(8, 8))
    seq, symptomatic, lesion = ph.simulate_passive(spec, 20000.0, 1e-3)
    T_ss = spec.steady_temperature
    rise = T_ss - spec.arterial_temp
    assert not symptomatic and not lesion.any()
    assert np.all(np.abs(seq.frames[-1] - T_ss) <= 1e-3 * rise)
    assert np.all(np.abs(seq.frames[-1] - T_ss) <= 1e-3 * T_ss)


def test_passive_starts_from_arterial_and_rises_monotonically():
    spec = ph.BioheatSpec(grid=(4, 4))
    seq, _, _ = ph.simulate_passive(spec, 2000.0, 0.01)
    means = seq.frames.mean(axis=(1, 2))
    assert np.all(np.diff(means) > 0)
    assert means[0] > spec.arterial_temp


def test_passive_lesion_is_warmer():
    lesion = ph.Lesion((32 * mm, 32 * mm), 8 * mm, perfusion_multiplier=1.0, metabolic_multiplier=2.0)
    spec = ph.BioheatSpec(grid=(32, 32), lesions=(lesion,))
    seq, symptomatic, mask = ph.simulate_passive(spec, 20000.0, 1e-3)
    last = seq.frames[-1]
    assert symptomatic and mask[16, 16]
    assert last[16, 16] > last[0, 0]


def test_passive_rejects_bad_lesion():
    with pytest.raises(SpecError):
        ph.BioheatSpec(grid=(8, 8), lesions=(ph.Lesion((1.0, 1.0), 0.01),))
    with pytest.raises(SpecError):
        ph.BioheatSpec(grid=(8, 8), lesions=(ph.Lesion((0.005, 0.005), 0.002, 0.5, 1.0),))


def test_random_subject_is_seeded():
    a = ph.random_subject(np.random.default_rng(3), True, grid=(16, 16))
    b = ph.random_subject(np.random.default_rng(3), True, grid=(16, 16))
    assert a.lesions == b.lesions
    assert np.array_equal(a.perfusion_map, b.perfusion_map)
    assert len(ph.random_subject(np.random.default_rng(3), False, grid=(16, 16)).lesions) == 0
