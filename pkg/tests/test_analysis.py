import numpy as np
import pytest

from bald.analysis import (
    APT,
    DEFAULT_POOLS,
    MT,
    NOE,
    WATER,
    PoolSpec,
    aptw_map,
    contrast_maps,
    fit_lorentzian,
    lorentzian,
    lorentzian_jacobian,
    mtr_asym,
    pack,
    pools_by_name,
)
from bald.core import SpectralSequence
from bald.errors import ConfigurationError, DataError
from bald.phantom import PhantomSpec, compartment_labels, generate_phantom

from conftest import requires_ext

OFFSETS = np.round(np.arange(-40, 41) * 0.25, 10)
TRUE_P = np.array([0.8, 3.0, 0.1, 0.06, 1.5, 3.5, 0.04, 2.5, -3.5, 0.1, 25.0, -2.5])


def random_feasible(rng):
    p0, lo, hi = pack(DEFAULT_POOLS)
    amp = rng.uniform(0.02, 0.6, 4)
    wid = rng.uniform(0.5, 10, 4)
    p = np.empty(12)
    p[0::3], p[1::3] = amp, wid
    p[2::3] = p0[2::3]
    p[2] = rng.uniform(-0.5, 0.5)
    return p


def test_model_values():
    p = np.array([0.5, 2.0, 0.0])
    z = lorentzian(p, np.array([0.0, 1.0, -1.0, 100.0]))
    assert z.tolist() == pytest.approx([0.5, 0.75, 0.75, 1 - 0.5 / (1 + 100.0**2)])


def test_zero_amplitudes_give_ones():
    p = TRUE_P.copy()
    p[0::3] = 0
    assert np.all(lorentzian(p, OFFSETS) == 1.0)


def test_exchange_centers_follow_water():
    p = TRUE_P.copy()
    shifted = p.copy()
    shifted[2] += 0.3
    assert np.allclose(lorentzian(shifted, OFFSETS + 0.3), lorentzian(p, OFFSETS))


def test_jacobian_matches_central_differences(rng):
    for _ in range(20):
        p = random_feasible(rng)
        J = lorentzian_jacobian(p, OFFSETS)
        fd = np.empty_like(J)
        for i in range(p.size):
            h = 1e-6 * max(1.0, abs(p[i]))
            e = np.zeros_like(p)
            e[i] = h
            fd[:, i] = (lorentzian(p + e, OFFSETS) - lorentzian(p - e, OFFSETS)) / (2 * h)
        scale = np.max(np.abs(fd), axis=0)
        assert np.max(np.abs(J - fd) / scale) < 1e-5


def test_noiseless_refit(backend):
    r = fit_lorentzian(OFFSETS, lorentzian(TRUE_P, OFFSETS), backend=backend)
    assert r.converged
    for k in range(4):
        assert abs(r.params[3 * k] / TRUE_P[3 * k] - 1) < 0.01
    assert abs(r.params[2] - TRUE_P[2]) < 0.02
    assert r.pool_params("APT")["center"] == pytest.approx(3.6)


def test_all_ones_spectrum():
    r = fit_lorentzian(OFFSETS, np.ones(OFFSETS.size))
    assert r.converged
    assert all(abs(a) < 1e-9 for a in r.amplitudes().values())


def test_bounds_are_respected(rng):
    z = lorentzian(TRUE_P, OFFSETS) + 0.05 * rng.standard_normal(OFFSETS.size)
    r = fit_lorentzian(OFFSETS, z)
    _, lo, hi = pack(DEFAULT_POOLS)
    assert np.all(r.params >= lo) and np.all(r.params <= hi)


def test_iteration_cap_is_flagged():
    r = fit_lorentzian(OFFSETS, lorentzian(TRUE_P, OFFSETS), max_iter=1)
    assert not r.converged and r.n_iter == 1


def test_residual_never_increases():
    z = lorentzian(TRUE_P, OFFSETS)
    prev = np.inf
    for it in range(1, 12):
        r = fit_lorentzian(OFFSETS, z, max_iter=it)
        assert r.residual_norm <= prev
        prev = r.residual_norm


def test_fit_errors():
    z = np.ones(OFFSETS.size)
    z[3] = np.nan
    with pytest.raises(DataError):
        fit_lorentzian(OFFSETS, z)
    with pytest.raises(ConfigurationError):
        fit_lorentzian(OFFSETS[:10], np.ones(10))
    with pytest.raises(ConfigurationError):
        fit_lorentzian(OFFSETS, np.ones(5))
    with pytest.raises(ConfigurationError):
        pools_by_name(["APT", "GLU"])
    with pytest.raises(ConfigurationError):
        PoolSpec("x", 1.0, width_bounds=(0.0, 1.0))


def test_pools_by_name_adds_water():
    assert pools_by_name(["NOE"]) == (WATER, NOE)
    assert pools_by_name(["water", "APT", "MT"]) == (WATER, APT, MT)


def test_mtr_asym():
    off = np.array([-3.5, 0.0, 3.5])
    assert mtr_asym(off, np.array([0.95, 0.2, 0.90])) == pytest.approx(0.05)
    sym = lorentzian(np.array([0.7, 2.0, 0.0]), OFFSETS)
    for dw in (0.5, 2.0, 3.5, 7.3):
        assert abs(mtr_asym(OFFSETS, sym, dw)) < 1e-15
    with pytest.raises(ConfigurationError):
        mtr_asym(off, np.ones(3), 5.0)


def test_mtr_asym_is_linear(rng):
    s1, s2 = rng.random(OFFSETS.size), rng.random(OFFSETS.size)
    a, b = 0.7, -1.3
    assert mtr_asym(OFFSETS, a * s1 + b * s2) == pytest.approx(a * mtr_asym(OFFSETS, s1) + b * mtr_asym(OFFSETS, s2))


def test_aptw_map():
    spec = PhantomSpec(graded=(PhantomSpec().graded[0],), background=())
    seq = generate_phantom(spec)
    lab = compartment_labels(spec)
    m = aptw_map(seq)
    cols = [m[lab % 3 == j % 3].mean() for j in (1, 2, 3)]
    assert abs(cols[0]) < 1e-12 and cols[1] > 0 and cols[2] > cols[1]

    flat = generate_phantom(PhantomSpec(graded=(), background=()))
    assert np.all(np.abs(aptw_map(flat)) < 1e-15)

    mask = np.ones(seq.shape[1:], bool)
    mask[0, :5] = False
    mm = aptw_map(seq.with_frames(seq.frames, mask=mask))
    assert np.all(mm.mask[0, :5]) and np.all(mm.data[0, :5] == 0)


def test_contrast_maps_single_pixel():
    seq = SpectralSequence(lorentzian(TRUE_P, OFFSETS).reshape(-1, 1, 1), OFFSETS)
    cm = contrast_maps(seq)
    assert cm.amplitudes["APT"].shape == (1, 1)
    assert cm.amplitudes["APT"][0, 0] == pytest.approx(0.06, rel=0.01)


def test_contrast_maps_noise_free_grid():
    spec = PhantomSpec(height=9, width=9)
    lab = compartment_labels(spec)
    cm = contrast_maps(generate_phantom(spec))
    assert cm.converged.all()
    apt = [cm.amplitudes["APT"][(lab - 1) % 3 == j].mean() for j in range(3)]
    noe = [cm.amplitudes["NOE"][(lab - 1) // 3 == i].mean() for i in range(3)]
    assert apt[0] < apt[1] < apt[2] and noe[0] < noe[1] < noe[2]


def test_contrast_maps_mask_and_workers():
    spec = PhantomSpec(height=9, width=9)
    seq = generate_phantom(spec)
    mask = np.ones((9, 9), bool)
    mask[4, 4] = False
    seq = seq.with_frames(seq.frames, mask=mask)
    a = contrast_maps(seq, workers=1)
    b = contrast_maps(seq, workers=4)
    assert np.array_equal(a.params, b.params)
    assert a.params[4, 4].sum() == 0 and not a.converged[4, 4]
    assert not a.failed[4, 4]
    assert a.metadata["pools"][0]["name"] == "water"


@requires_ext
def test_fit_backends_agree(rng):
    seq = generate_phantom(PhantomSpec(height=6, width=6))
    noisy = seq.with_frames(seq.frames + 0.02 * rng.standard_normal(seq.shape))
    a = contrast_maps(noisy, backend="python")
    b = contrast_maps(noisy, backend="cython")
    assert np.max(np.abs(a.params - b.params)) < 1e-6
    assert np.array_equal(a.converged, b.converged)
