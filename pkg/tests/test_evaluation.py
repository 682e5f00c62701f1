import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thermofactor import evaluation as ev
from thermofactor import seqio
from thermofactor.errors import DegenerateInputError, ParameterError
from thermofactor.seqio import ThermalSequence


def disc(n, cy, cx, r):
    yy, xx = np.mgrid[:n, :n]
    return (yy - cy) ** 2 + (xx - cx) ** 2 <= r ** 2


# ---- jaccard

def test_jaccard_examples():
    gt = np.array([[0, 1], [0, 1]], bool)
    assert ev.jaccard(gt, gt) == 1.0
    assert ev.jaccard(~gt, gt) == 0.0
    det = np.array([[1, 1], [0, 0]], bool)
    assert ev.jaccard(det, gt) == pytest.approx(1 / 3, abs=0)


def test_jaccard_errors():
    with pytest.raises(ParameterError):
        ev.jaccard(np.ones((2, 2)), np.ones((2, 3)))
    with pytest.raises(ParameterError):
        ev.jaccard(np.ones((2, 2)), np.zeros((2, 2)))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_jaccard_properties(seed):
    rng = np.random.default_rng(seed)
    a = rng.uniform(size=(6, 7)) < 0.4
    b = rng.uniform(size=(6, 7)) < 0.4
    a[0, 0] = b[1, 1] = True
    j = ev.jaccard(a, b)
    assert 0 <= j <= 1
    assert j == ev.jaccard(b, a)
    assert (j == 1) == np.array_equal(a, b)
    # adding a gt pixel to detected never lowers the score
    cand = np.argwhere(b & ~a)
    if len(cand):
        a2 = a.copy()
        a2[tuple(cand[0])] = True
        assert ev.jaccard(a2, b) >= j


# ---- binarize

def test_binarize_examples():
    gt = disc(10, 5, 5, 3)
    assert np.array_equal(ev.binarize(gt.astype(float), 0.5), gt)
    img = np.array([[0.0, 10.0], [20.0, 30.0]])
    np.testing.assert_array_equal(ev.binarize(img, 0.5), [[False, False], [True, True]])
    img = np.random.default_rng(0).normal(size=(5, 5))
    top = ev.binarize(img, 1 - 1e-12)
    assert top.sum() == 1 and top[np.unravel_index(img.argmax(), img.shape)]


def test_binarize_constant_flags():
    mask, flag = ev.binarize(np.full((3, 3), 2.0), 0.3, with_flag=True)
    assert flag and mask.all()


@pytest.mark.parametrize("q", [0.0, 1.0, -0.1])
def test_binarize_rejects_quantile(q):
    with pytest.raises(ParameterError):
        ev.binarize(np.eye(2), q)


# ---- threshold sweep

def test_sweep_levels():
    levels = ev.sweep_levels(0.05)
    assert len(levels) == 19 and levels[0] == 0.05 and levels[-1] == 0.95
    assert all(a < b for a, b in zip(levels, levels[1:]))
    with pytest.raises(ParameterError):
        ev.sweep_levels(0.6)


def test_sweep_perfect_and_inverted():
    gt = disc(16, 8, 8, 4)
    r = ev.threshold_sweep(gt.astype(float), gt)
    assert r.best_jaccard == 1.0 and r.polarity == 1
    r = ev.threshold_sweep(-gt.astype(float), gt, invert=True)
    assert r.best_jaccard == 1.0 and r.polarity == -1
    r = ev.threshold_sweep(-gt.astype(float), gt, invert=False)
    assert r.best_jaccard < 1.0


def test_sweep_matches_brute_force_on_noisy_indicator():
    gt = disc(24, 12, 12, 6)
    img = gt + np.random.default_rng(3).uniform(0, 0.4, size=gt.shape)
    r = ev.threshold_sweep(img, gt, step=0.05, invert=True)
    brute = []
    for sign in (1, -1):
        s = sign * img
        lo, hi = s.min(), s.max()
        for i in range(1, 20):
            det = s >= lo + (i * 0.05) * (hi - lo)
            brute.append(np.count_nonzero(det & gt) / np.count_nonzero(det | gt))
    assert r.best_jaccard == max(brute)
    assert r.best_jaccard == max(r.jaccard_per_threshold)
    for j in r.jaccard_positive:
        assert r.best_jaccard >= j


# ---- snr

def make_snr_image(mu_s, mu_n, sigma):
    img = np.zeros((4, 4))
    sig = np.zeros((4, 4), bool)
    sig[0, :] = True
    img[0, :] = mu_s
    noise = ~sig
    img[noise] = mu_n + sigma * np.array([1, -1] * 6)  # population std exactly sigma
    return img, sig, noise


def test_snr_examples():
    img, s, n = make_snr_image(10.0, 0.0, 1.0)
    assert ev.snr(img, s, n) == pytest.approx(20.0, abs=1e-12)
    img, s, n = make_snr_image(10.0, 5.0, 1.0)
    assert ev.snr(img, s, n) == pytest.approx(10 * math.log10(25), abs=1e-12)


def test_snr_degenerate_noise():
    img, s, n = make_snr_image(10.0, 0.0, 0.0)
    with pytest.raises(DegenerateInputError):
        ev.snr(img, s, n)


def test_snr_equal_means_negative_infinity():
    img, s, n = make_snr_image(0.0, 0.0, 1.0)
    assert ev.snr(img, s, n) == -math.inf


def test_snr_roi_errors():
    img, s, n = make_snr_image(1.0, 0.0, 1.0)
    with pytest.raises(ParameterError):
        ev.snr(img, s, s | n)
    with pytest.raises(ParameterError):
        ev.snr(img, np.zeros_like(s), n)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-100, 100), st.sampled_from([0.5, 2.0, 8.0, -4.0]))
def test_snr_shift_and_scale_invariance(seed, shift, scale):
    rng = np.random.default_rng(seed)
    img = rng.integers(-50, 50, size=(6, 6)).astype(float)
    s = np.zeros((6, 6), bool)
    s[:2] = True
    n = ~s
    img[n] += rng.integers(-3, 4, size=n.sum())
    if img[n].std() == 0:
        return
    base = ev.snr(img, s, n)
    assert ev.snr(img + shift, s, n) == pytest.approx(base, rel=1e-9, abs=1e-9)
    assert ev.snr(img * scale, s, n) == pytest.approx(base, rel=1e-9, abs=1e-9)


def test_snr_shift_exact_for_representable_values():
    img, s, n = make_snr_image(10.0, 5.0, 1.0)
    assert ev.snr(img + 4.0, s, n) == ev.snr(img, s, n)
    assert ev.snr(img * 2.0, s, n) == ev.snr(img, s, n)


# ---- per-defect and robustness

def test_per_defect_windows_exclude_other_defects():
    a, b = disc(32, 8, 8, 4), disc(32, 24, 24, 5)
    wa, wb = ev.defect_windows([a, b])
    assert (wa & a).sum() == a.sum() and not (wa & b).any()
    assert not (wb & a).any()
    assert wa.sum() > a.sum()


def test_per_defect_scores_shallow_vs_faint():
    a, b = disc(32, 8, 8, 4), disc(32, 24, 24, 4)
    rng = np.random.default_rng(0)
    img = 1.0 * a + 0.2 * b + rng.normal(0, 0.05, size=a.shape)
    scores = ev.per_defect_scores(img, [a, b])
    assert scores[0].best_jaccard == 1.0
    assert scores[0].best_jaccard >= scores[1].best_jaccard


def synthetic_sequence():
    n, tau = 24, 12
    gt = disc(n, 12, 12, 5)
    t = np.arange(1, tau + 1)[:, None, None]
    frames = 1.0 / np.sqrt(t) * np.ones((tau, n, n)) + 0.3 * gt * np.exp(-((t - 5.0) / 3) ** 2)
    return ThermalSequence(frames), gt


def test_robustness_zero_level_matches_clean_pipeline():
    seq, gt = synthetic_sequence()
    noise_roi = ev.sound_region(gt)
    points = ev.robustness_curve(seq, "pct", 3, gt, gt, noise_roi, [0.0], seed=1)
    from thermofactor.factor import pct, select_component
    model = pct(seqio.vectorize(seq), 3)
    _, img = select_component(model, gt)
    assert points[0].snr == ev.snr(img, gt, noise_roi)
    assert points[0].best_jaccard == ev.threshold_sweep(img, gt).best_jaccard


def test_robustness_shape_and_determinism():
    seq, gt = synthetic_sequence()
    noise_roi = ev.sound_region(gt)
    levels = [0.03, 0.1, 0.2]
    a = ev.robustness_curve(seq, "pct", 3, gt, gt, noise_roi, levels, seed=4)
    b = ev.robustness_curve(seq, "pct", 3, gt, gt, noise_roi, levels, seed=4, threads=3)
    assert [p.level for p in a] == levels
    assert a == b
    assert a[0].snr >= a[-1].snr


def test_robustness_nonnegative_method_shifts_noisy_data():
    seq, gt = synthetic_sequence()
    points = ev.robustness_curve(seq, "nmf_gd", 2, gt, gt, ev.sound_region(gt), [0.2], seed=0,
                                 opts=ev.SolverOptions(max_iter=50))
    assert len(points) == 1


def test_csv_outputs():
    gt = disc(8, 4, 4, 2)
    text = ev.sweep_csv(ev.threshold_sweep(gt.astype(float), gt))
    lines = text.split("\r\n")
    assert lines[0] == "level_or_threshold,jaccard,snr,polarity"
    assert len([x for x in lines if x]) == 20
