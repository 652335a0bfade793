import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ktrecon.errors import DataError, MalformedFile, NonFiniteData, ShapeMismatch, ZeroVolume
from ktrecon.volume import (ComplexVolume, Domain, fftc, ifftc, load_volume, normalize, save_volume,
                            spatial_fft2c, spatial_ifft2c, temporal_fft1c, temporal_ifft1c)

from conftest import naive_centered_dft, random_volume


def test_center_impulse_gives_flat_kspace():
    x = np.zeros((1, 4, 4), complex)
    x[0, 2, 2] = 1.0
    k = spatial_fft2c(ComplexVolume(x, Domain.IMAGE_TIME))
    assert k.domain == Domain.KSPACE_TIME
    np.testing.assert_allclose(k.data, 0.25 * np.ones((1, 4, 4)), atol=1e-15)
    back = spatial_ifft2c(k)
    np.testing.assert_allclose(back.data, x, atol=1e-15)


def test_zero_volume_maps_to_zero():
    z = ComplexVolume(np.zeros((2, 3, 5)), Domain.KSPACE_TIME)
    assert np.all(spatial_ifft2c(z).data == 0)


@pytest.mark.parametrize("n", [1, 2, 3, 4, 5, 8, 9])
def test_fftc_matches_naive_sum(rng, n):
    x = rng.standard_normal(n) + 1j * rng.standard_normal(n)
    np.testing.assert_allclose(fftc(x, (0,)), naive_centered_dft(x), atol=1e-12)
    np.testing.assert_allclose(ifftc(naive_centered_dft(x), (0,)), x, atol=1e-12)


def test_temporal_constant_goes_to_dc(rng):
    c = 0.7 - 0.2j
    v = ComplexVolume(np.full((6, 3, 2), c), Domain.IMAGE_TIME)
    f = temporal_fft1c(v)
    assert f.domain == Domain.IMAGE_TEMPFREQ
    np.testing.assert_allclose(f.data[3], c * np.sqrt(6), atol=1e-12)
    others = np.delete(f.data, 3, axis=0)
    assert np.max(np.abs(others)) < 1e-12


def test_rotating_pixel_single_bin():
    x = np.zeros((4, 2, 2), complex)
    x[:, 1, 0] = [1, 1j, -1, -1j]
    f = temporal_fft1c(ComplexVolume(x, Domain.IMAGE_TIME)).data[:, 1, 0]
    mags = np.abs(f)
    assert np.count_nonzero(mags > 1e-12) == 1
    assert mags.max() == pytest.approx(2.0, abs=1e-12)


def test_domain_checks():
    v = ComplexVolume(np.ones((1, 2, 2)), Domain.KSPACE_TIME)
    with pytest.raises(DataError):
        spatial_fft2c(v)
    with pytest.raises(DataError):
        temporal_fft1c(v)
    with pytest.raises(DataError):
        temporal_ifft1c(v)


def test_invalid_volumes():
    with pytest.raises(ShapeMismatch):
        ComplexVolume(np.ones((2, 2)), Domain.IMAGE_TIME)
    with pytest.raises(NonFiniteData):
        ComplexVolume(np.array([[[np.nan]]]), Domain.IMAGE_TIME)


shapes = st.tuples(st.integers(1, 5), st.integers(1, 7), st.integers(1, 7))


@settings(max_examples=40, deadline=None)
@given(shapes, st.integers(0, 2 ** 31 - 1))
def test_round_trip_and_parseval(shape, seed):
    v = random_volume(np.random.default_rng(seed), shape)
    for fwd, inv in ((spatial_fft2c, spatial_ifft2c), (temporal_fft1c, temporal_ifft1c)):
        w = fwd(v)
        assert w.norm() == pytest.approx(v.norm(), rel=1e-12)
        back = inv(w)
        assert back.domain == Domain.IMAGE_TIME
        np.testing.assert_allclose(back.data, v.data, rtol=0, atol=1e-12 * v.norm())


@settings(max_examples=20, deadline=None)
@given(shapes, st.integers(0, 2 ** 31 - 1), st.complex_numbers(max_magnitude=10, allow_nan=False),
       st.complex_numbers(max_magnitude=10, allow_nan=False))
def test_linearity(shape, seed, a, b):
    r = np.random.default_rng(seed)
    x, y = random_volume(r, shape), random_volume(r, shape)
    lhs = spatial_fft2c(x.with_data(a * x.data + b * y.data)).data
    rhs = a * spatial_fft2c(x).data + b * spatial_fft2c(y).data
    np.testing.assert_allclose(lhs, rhs, atol=1e-10 * (1 + abs(a) + abs(b)) * (x.norm() + y.norm()))


def test_normalize():
    data = np.zeros((2, 2, 2), complex)
    data[1, 0, 1] = 4j
    data[0, 1, 1] = 1.0
    out, scale = normalize(ComplexVolume(data, Domain.IMAGE_TIME))
    assert scale == 4.0
    assert np.max(np.abs(out.data)) == 1.0
    again, s2 = normalize(out)
    assert s2 == 1.0
    np.testing.assert_array_equal(again.data, out.data)
    with pytest.raises(ZeroVolume):
        normalize(ComplexVolume(np.zeros((1, 2, 2)), Domain.IMAGE_TIME))


def test_file_round_trip_is_bit_exact(tmp_path, rng):
    data = (rng.standard_normal((3, 4, 5)) + 1j * rng.standard_normal((3, 4, 5))).astype(np.complex64)
    v = ComplexVolume(data, Domain.IMAGE_TEMPFREQ)
    p = tmp_path / "v.ktv"
    save_volume(v, p, scale=2.5)
    w, scale = load_volume(p, with_scale=True)
    assert scale == 2.5 and w.domain == Domain.IMAGE_TEMPFREQ
    assert w.data.astype(np.complex64).tobytes() == data.tobytes()
    raw = open(p, "rb").read()
    assert raw.endswith(data.view(np.float32).astype("<f4").tobytes())
    # saving the reloaded volume reproduces the file byte for byte
    save_volume(w, tmp_path / "w.ktv", scale=2.5)
    assert open(tmp_path / "w.ktv", "rb").read() == raw


def test_file_errors(tmp_path, rng):
    p = tmp_path / "v.ktv"
    save_volume(random_volume(rng, (2, 2, 2)), p)
    raw = open(p, "rb").read()
    (tmp_path / "short.ktv").write_bytes(raw[:-3])
    with pytest.raises(MalformedFile):
        load_volume(tmp_path / "short.ktv")
    (tmp_path / "bad.ktv").write_bytes(b"NOT A VOLUME\n{}\n")
    with pytest.raises(MalformedFile):
        load_volume(tmp_path / "bad.ktv")
    header_end = raw.index(b"\n", raw.index(b"\n") + 1)
    broken = raw[:raw.index(b"\n") + 1] + b'{"T": 2}' + raw[header_end:]
    (tmp_path / "hdr.ktv").write_bytes(broken)
    with pytest.raises(MalformedFile):
        load_volume(tmp_path / "hdr.ktv")
