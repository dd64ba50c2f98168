import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bald.core import SpectralSequence
from bald.errors import ConfigurationError, EstimationError
from bald.noise import (
    NoiseCurve,
    apply_ivst,
    apply_vst,
    bin_index,
    build_vst,
    estimate_noise_curve,
    extract_noise_samples,
)
from bald.phantom import add_model_noise, noise_model


def const_curve(c, lo=0.0, hi=1.0, n=11):
    u = np.linspace(lo, hi, n)
    return NoiseCurve(u, np.full(n, c), lo, hi, n, n)


def noisy_constant(level, sigma, shape, seed):
    rng = np.random.default_rng(seed)
    frames = level + sigma * rng.standard_normal(shape)
    return SpectralSequence(frames, np.arange(shape[0], dtype=float))


# --- samples


def test_second_difference_annihilates_affine():
    k = np.arange(9, dtype=float)
    frames = (0.3 + 0.05 * k)[:, None, None] * np.ones((9, 4, 5))
    s = extract_noise_samples(SpectralSequence(frames, k))
    assert all(np.all(np.abs(x) < 1e-15) for x in s.samples)
    assert s.frame_index == tuple(range(1, 8))


def test_second_difference_formula():
    frames = np.array([1.0, 4.0, 2.0])[:, None, None]
    s = extract_noise_samples(SpectralSequence(frames, [0.0, 1.0, 2.0]))
    assert s.samples[0][0] == pytest.approx((8.0 - 1.0 - 2.0) / np.sqrt(6.0))
    assert s.intensities[0][0] == pytest.approx(7.0 / 3.0)
    c = extract_noise_samples(SpectralSequence(frames, [0.0, 1.0, 2.0]), intensity="center")
    assert c.intensities[0][0] == 4.0


def test_unit_variance_scaling():
    stds = []
    for seed in range(10):
        s = extract_noise_samples(noisy_constant(0.5, 0.05, (31, 64, 64), seed))
        stds.append(np.concatenate(s.samples).std())
    assert np.all(np.abs(np.array(stds) / 0.05 - 1) < 0.05)


def test_too_few_offsets():
    with pytest.raises(ConfigurationError):
        extract_noise_samples(SpectralSequence(np.ones((2, 3, 3)), [0.0, 1.0]))


def test_mask_restricts_samples():
    frames = np.random.default_rng(0).random((5, 4, 4))
    mask = np.zeros((4, 4), bool)
    mask[1:3, 1:3] = True
    s = extract_noise_samples(SpectralSequence(frames, np.arange(5.0), mask=mask))
    assert all(x.size == 4 for x in s.samples)
    assert s.intensity_min == frames[:, mask].min()


# --- binning and curve


def test_bin_index_edges():
    idx = bin_index(np.array([0.0, 0.099, 0.1, 0.55, 1.0]), 0.0, 1.0, 10)
    assert idx.tolist() == [0, 0, 1, 5, 9]


def test_constant_noise_curve():
    s = extract_noise_samples(noisy_constant(0.5, 0.05, (31, 64, 64), 1))
    c = estimate_noise_curve(s)
    assert np.all((c.sigma >= 0.045) & (c.sigma <= 0.055))
    assert c.intensity.size == 100
    assert c.intensity[0] == s.intensity_min and c.intensity[-1] == s.intensity_max


def test_outlier_frame_is_suppressed_by_median(clean_phantom):
    s = extract_noise_samples(add_model_noise(clean_phantom, "A", 3))
    ref = estimate_noise_curve(s)
    bad = list(s.samples)
    bad[40] = bad[40] * 10.0
    out = estimate_noise_curve(dataclasses.replace(s, samples=tuple(bad)))
    assert np.max(np.abs(out.sigma / ref.sigma - 1)) < 0.05


def test_model_curve_recovery(clean_phantom):
    for cid in "ABCD":
        g = noise_model(cid)
        c = estimate_noise_curve(extract_noise_samples(add_model_noise(clean_phantom, cid, 11)))
        ok = c.bin_counts >= 500
        centers = c.bin_centers[ok]
        assert np.all(np.abs(np.interp(centers, c.intensity, c.sigma) / g(centers) - 1) < 0.15)


def test_estimation_errors():
    flat = SpectralSequence(np.full((5, 3, 3), 0.4), np.arange(5.0))
    with pytest.raises(EstimationError):
        estimate_noise_curve(extract_noise_samples(flat))
    s = extract_noise_samples(noisy_constant(0.5, 0.05, (5, 3, 3), 0))
    with pytest.raises(EstimationError):
        estimate_noise_curve(s, min_count=10**6)
    with pytest.raises(ConfigurationError):
        estimate_noise_curve(s, t1=1)
    with pytest.raises(ConfigurationError):
        estimate_noise_curve(s, t1=10, t2=5)


def test_csv_round_trip(tmp_path):
    s = extract_noise_samples(noisy_constant(0.5, 0.05, (9, 16, 16), 2))
    c = estimate_noise_curve(s, t1=4, t2=20)
    text = c.to_csv(tmp_path / "c.csv")
    assert text.splitlines()[0] == "intensity,sigma"
    back = NoiseCurve.from_csv(tmp_path / "c.csv")
    assert np.array_equal(back.intensity, c.intensity) and np.array_equal(back.sigma, c.sigma)
    assert np.array_equal(NoiseCurve.from_csv(text).sigma, c.sigma)
    with pytest.raises(ConfigurationError):
        NoiseCurve.from_csv("u,s\n1,2\n")


# --- transform


def test_sigma_target_is_mean():
    u = np.array([0.0, 0.5, 1.0])
    c = NoiseCurve(u, np.array([0.02, 0.04, 0.06]), 0.0, 1.0, 3, 3)
    assert build_vst(c).sigma_target == pytest.approx(0.04)


def test_constant_curve_is_shift():
    t = build_vst(const_curve(0.03, 0.2, 1.2))
    u = np.linspace(0.2, 1.2, 37)
    assert np.allclose(t.forward(u), u - 0.2, atol=1e-15)
    seq = SpectralSequence(u.reshape(37, 1, 1), np.arange(37.0))
    assert np.allclose(apply_vst(seq, t).frames.ravel(), u - 0.2, atol=1e-15)


def test_model_a_forward_monotone_and_invertible():
    g = noise_model("A")
    u = np.linspace(0.05, 1.0, 100)
    t = build_vst(NoiseCurve(u, g(u), 0.05, 1.0, 10, 100))
    assert np.all(np.diff(t.forward_v) > 0)
    x = np.random.default_rng(4).uniform(0.05, 1.0, 5000)
    assert np.max(np.abs(t.inverse(t.forward(x)) - x) / x) < 1e-9


@settings(max_examples=40, deadline=None)
@given(
    sig=st.lists(st.floats(0.005, 0.2), min_size=2, max_size=30),
    lo=st.floats(-1, 1),
    span=st.floats(0.1, 5),
    seed=st.integers(0, 2**31),
)
def test_round_trip_on_random_fields(sig, lo, span, seed):
    u = np.linspace(lo, lo + span, len(sig))
    t = build_vst(NoiseCurve(u, np.array(sig), lo, lo + span, len(sig), len(sig)))
    frames = np.random.default_rng(seed).uniform(lo, lo + span, (5, 6, 7))
    seq = SpectralSequence(frames, np.arange(5.0))
    back = apply_ivst(apply_vst(seq, t), t)
    assert np.max(np.abs(back.frames - frames)) < 1e-6 * span


def test_clamping_is_counted():
    t = build_vst(const_curve(0.05))
    frames = np.array([-0.5, 0.5, 1.5, 0.2]).reshape(4, 1, 1)
    out, n = apply_vst(SpectralSequence(frames, np.arange(4.0)), t, return_clamped=True)
    assert n == 2
    assert out.frames.ravel().tolist() == pytest.approx([0.0, 0.5, 1.0, 0.2])


def test_curve_validation():
    with pytest.raises(ConfigurationError):
        NoiseCurve(np.array([0.0, 1.0]), np.array([0.1, -0.1]), 0.0, 1.0, 2, 2)


def test_median_bounded_by_clean_frames():
    from bald.noise import frame_bin_rms

    rng = np.random.default_rng(8)
    base = rng.uniform(0.1, 1.0, (48, 48))
    frames = base + (0.01 + 0.04 * base) * rng.standard_normal((21, 48, 48))
    s = extract_noise_samples(SpectralSequence(frames, np.arange(21.0)))
    n = len(s)
    bad = list(s.samples)
    corrupted = rng.choice(n, size=n // 2 - 1, replace=False)
    for k in corrupted:
        bad[k] = bad[k] * rng.uniform(0, 50)
    t = dataclasses.replace(s, samples=tuple(bad))
    merged = estimate_noise_curve(t, min_count=1).bin_sigma
    rms, _ = frame_bin_rms(s, 10)
    keep = np.setdiff1d(np.arange(n), corrupted)
    lo, hi = np.nanmin(rms[keep], axis=0), np.nanmax(rms[keep], axis=0)
    # bins every frame contributes to, so corrupted frames stay a minority there
    has = ~np.isnan(rms).any(axis=0)
    assert has.sum() >= 3
    assert np.all((merged[has] >= lo[has] - 1e-15) & (merged[has] <= hi[has] + 1e-15))
