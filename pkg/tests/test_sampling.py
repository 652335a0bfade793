import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ktrecon.errors import InvalidAcceleration, InvalidDensity, MalformedFile, ShapeMismatch
from ktrecon.sampling import (SamplingMask, apply_data_consistency, apply_mask, full_mask,
                              lattice_mask, lines_per_frame, load_mask, save_mask, undersample,
                              vd_density, vd_random_mask)
from ktrecon.volume import ComplexVolume, Domain

from conftest import random_volume


def test_lattice_definition_unrolled():
    m = lattice_mask(4, 8, 4)
    assert [list(m.sampled_lines(t)) for t in range(4)] == [[0, 4], [1, 5], [2, 6], [3, 7]]
    assert m.kind == "lattice" and m.acceleration == 4


def test_lattice_r1_is_full():
    assert lattice_mask(3, 7, 1).grid.all()


def test_lattice_coverage_counted():
    m = lattice_mask(8, 16, 8)
    assert all(len(m.sampled_lines(t)) == 2 for t in range(8))
    counts = np.zeros(16, int)
    for t in range(8):
        for ky in m.sampled_lines(t):
            counts[ky] += 1
    assert np.all(counts == 1)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 12), st.integers(1, 40), st.integers(-5, 5), st.integers(-9, 9),
       st.integers(1, 30))
def test_lattice_counts_and_window_coverage(R, Ky, shear, offset, T):
    if R > Ky:
        with pytest.raises(InvalidAcceleration):
            lattice_mask(T, Ky, R, shear, offset)
        return
    m = lattice_mask(T, Ky, R, shear, offset)
    per_frame = m.grid.sum(axis=1)
    assert set(per_frame) <= {Ky // R, -(-Ky // R)}
    for t in range(T):
        for ky in range(Ky):
            assert m.grid[t, ky] == (ky % R == (offset + t * shear) % R)
    if Ky % R == 0 and np.gcd(shear, R) == 1:
        for start in range(max(0, T - R + 1)):
            window = m.grid[start:start + R].sum(axis=0)
            assert np.all(window == 1)


def test_lattice_bad_acceleration():
    for R in (0, -1, 9, 2.5):
        with pytest.raises(InvalidAcceleration):
            lattice_mask(4, 8, R)


def test_vd_flat_envelope():
    m = vd_random_mask(6, 8, 2, density=1.0, envelope_frac=1e6, seed=3)
    assert np.all(m.grid.sum(axis=1) == 4)
    assert m.grid[:, 4].all()


def test_vd_deterministic():
    a = vd_random_mask(10, 32, 4, seed=7)
    b = vd_random_mask(10, 32, 4, seed=7)
    c = vd_random_mask(10, 32, 4, seed=8)
    assert a == b and hash(a) == hash(b)
    assert a != c


def test_vd_center_band_denser():
    T, Ky = 32, 96
    lo, hi = Ky // 2 - Ky // 10, Ky // 2 + Ky // 10
    band = np.zeros(Ky, bool)
    band[lo:hi] = True
    inner = outer = 0.0
    for seed in range(100):
        g = vd_random_mask(T, Ky, 8, 0.7, 0.2, seed=seed).grid
        inner += g[:, band].mean()
        outer += g[:, ~band].mean()
    assert inner > outer


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.integers(2, 48), st.integers(1, 8), st.floats(0.05, 1.0),
       st.floats(0.05, 1.0), st.integers(0, 10 ** 6))
def test_vd_counts_exact(T, Ky, R, density, env, seed):
    if R > Ky:
        return
    m = vd_random_mask(T, Ky, R, density, env, seed)
    assert np.all(m.grid.sum(axis=1) == lines_per_frame(Ky, R))
    assert m.grid[:, Ky // 2].all()


def test_vd_density_shape():
    p = vd_density(32, 0.7, 0.2)
    assert p.sum() == pytest.approx(1.0)
    assert np.argmax(p) == 16
    assert p.min() >= 0.3 / 32 * 0.99


def test_vd_errors():
    with pytest.raises(InvalidDensity):
        vd_random_mask(2, 8, 2, density=0.0)
    with pytest.raises(InvalidDensity):
        vd_random_mask(2, 8, 2, density=1.5)
    with pytest.raises(InvalidDensity):
        vd_random_mask(2, 8, 2, envelope_frac=-0.1)
    with pytest.raises(InvalidAcceleration):
        vd_random_mask(2, 8, 9)


def test_apply_mask_cases(rng):
    k = random_volume(rng, (3, 4, 6), Domain.KSPACE_TIME)
    np.testing.assert_array_equal(apply_mask(k, full_mask(3, 6)).data, k.data)
    grid = np.zeros((3, 6), bool)
    grid[:, 2] = True
    out = apply_mask(k, SamplingMask(grid)).data
    assert np.all(out[:, :, 2] == k.data[:, :, 2])
    assert np.all(np.delete(out, 2, axis=2) == 0)
    m = lattice_mask(3, 6, 3)
    once = apply_mask(k, m)
    np.testing.assert_array_equal(apply_mask(once, m).data, once.data)
    with pytest.raises(ShapeMismatch):
        apply_mask(k, lattice_mask(3, 5, 1))


def test_masking_is_self_adjoint(rng):
    m = vd_random_mask(4, 10, 3, seed=2)
    x = random_volume(rng, (4, 5, 10), Domain.KSPACE_TIME)
    y = random_volume(rng, (4, 5, 10), Domain.KSPACE_TIME)
    lhs = np.vdot(apply_mask(x, m).data, y.data)
    rhs = np.vdot(x.data, apply_mask(y, m).data)
    assert abs(lhs - rhs) < 1e-12 * abs(lhs)


def test_dc_against_loop(rng):
    for seed in range(5):
        r = np.random.default_rng(seed)
        grid = r.random((2, 4)) < 0.5
        m = SamplingMask(grid)
        pred = random_volume(r, (2, 4, 4), Domain.KSPACE_TIME)
        meas = apply_mask(random_volume(r, (2, 4, 4), Domain.KSPACE_TIME), m)
        out = apply_data_consistency(pred, meas, m).data
        for t in range(2):
            for h in range(4):
                for w in range(4):
                    expect = meas.data[t, h, w] if grid[t, w] else pred.data[t, h, w]
                    assert out[t, h, w] == expect


def test_dc_extremes_and_projection(rng):
    pred = random_volume(rng, (3, 4, 4), Domain.KSPACE_TIME)
    meas = random_volume(rng, (3, 4, 4), Domain.KSPACE_TIME)
    assert np.array_equal(apply_data_consistency(pred, meas, full_mask(3, 4)).data, meas.data)
    empty = SamplingMask(np.zeros((3, 4), bool))
    assert np.array_equal(apply_data_consistency(pred, meas, empty).data, pred.data)
    m = lattice_mask(3, 4, 2)
    meas = apply_mask(meas, m)
    once = apply_data_consistency(pred, meas, m)
    twice = apply_data_consistency(once, meas, m)
    assert np.array_equal(once.data, twice.data)


def test_soft_dc_weight(rng):
    m = lattice_mask(2, 4, 2)
    pred = random_volume(rng, (2, 3, 4), Domain.KSPACE_TIME)
    meas = apply_mask(random_volume(rng, (2, 3, 4), Domain.KSPACE_TIME), m)
    out = apply_data_consistency(pred, meas, m, weight=0.25).data
    sel = np.broadcast_to(m.grid[:, None, :], pred.shape)
    np.testing.assert_allclose(out[sel], 0.75 * pred.data[sel] + 0.25 * meas.data[sel])
    assert np.array_equal(out[~sel], pred.data[~sel])


def test_undersample_zero_off_mask(rng):
    m = lattice_mask(4, 8, 4)
    meas = undersample(random_volume(rng, (4, 6, 8)), m)
    assert meas.domain == Domain.KSPACE_TIME
    assert np.all(meas.data[np.broadcast_to(~m.grid[:, None, :], meas.shape)] == 0)


def test_mask_file_round_trip(tmp_path):
    m = vd_random_mask(5, 12, 3, seed=11)
    p = tmp_path / "m.ktm"
    save_mask(m, p)
    back = load_mask(p)
    assert back == m and back.seed == 11 and back.kind == "vdrandom" and back.acceleration == 3
    raw = p.read_bytes()
    assert raw.endswith(m.grid.astype(np.uint8).tobytes())
    p.write_bytes(raw[:-1])
    with pytest.raises(MalformedFile):
        load_mask(p)
    p.write_bytes(raw[:-1] + b"\x02")
    with pytest.raises(MalformedFile):
        load_mask(p)
