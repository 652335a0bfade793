import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ktrecon.errors import EmptyRegion, FrameTooSmall, ShapeMismatch, ZeroReference
from ktrecon.metrics import (PSNR_CAP, MetricsReport, evaluate, evaluate_volume, gaussian_window,
                             nmse, psnr, region_psnr, ssim)
from ktrecon.volume import ComplexVolume, Domain, fftc

from conftest import random_complex


def nmse_loop(x, y):
    num = den = 0.0
    for a, b in zip(x.ravel(), y.ravel()):
        num += abs(a - b) ** 2
        den += abs(b) ** 2
    return num / den


def psnr_loop(x, y):
    peak = max(abs(b) for b in y.ravel())
    mse = sum(abs(a - b) ** 2 for a, b in zip(x.ravel(), y.ravel())) / x.size
    return 10 * math.log10(peak ** 2 / mse)


def ssim_loop(x, y):
    """Direct per-window SSIM: weighted moments over every valid 11 x 11 patch."""
    w1 = gaussian_window()
    w = np.outer(w1, w1)
    xm, ym = np.abs(x), np.abs(y)
    L = ym.max()
    c1, c2 = (0.01 * L) ** 2, (0.03 * L) ** 2
    frames = []
    for a, b in zip(xm, ym):
        vals = []
        for i in range(a.shape[0] - 10):
            for j in range(a.shape[1] - 10):
                pa, pb = a[i:i + 11, j:j + 11], b[i:i + 11, j:j + 11]
                mx, my = (w * pa).sum(), (w * pb).sum()
                vx = (w * (pa - mx) ** 2).sum()
                vy = (w * (pb - my) ** 2).sum()
                cxy = (w * (pa - mx) * (pb - my)).sum()
                vals.append((2 * mx * my + c1) * (2 * cxy + c2)
                            / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
        frames.append(np.mean(vals))
    return float(np.mean(frames))


def pair(seed, shape=(4, 16, 16), noise=0.3):
    r = np.random.default_rng(seed)
    y = random_complex(r, shape)
    return y + noise * random_complex(r, shape), y


def test_nmse_examples(rng):
    y = random_complex(rng, (2, 4, 4))
    assert nmse(y, y) == 0.0
    assert nmse(np.zeros_like(y), y) == pytest.approx(1.0)
    assert nmse(0.5 * y, y) == pytest.approx(0.25)


def test_psnr_examples():
    y = np.zeros((1, 10, 10))
    y[0, 0, 0] = 1.0
    assert psnr(y, y) == PSNR_CAP
    x = y + 0.1  # mse exactly 0.01
    assert psnr(x, y) == pytest.approx(20.0, abs=1e-10)


@pytest.mark.parametrize("seed", range(10))
def test_oracles_random(seed):
    x, y = pair(seed)
    assert nmse(x, y) == pytest.approx(nmse_loop(x, y), abs=1e-10)
    assert psnr(x, y) == pytest.approx(psnr_loop(x, y), abs=1e-10)
    assert ssim(x, y) == pytest.approx(ssim_loop(x, y), abs=1e-8)


def test_ssim_matches_scikit_image():
    skm = pytest.importorskip("skimage.metrics")
    x, y = pair(3, (3, 20, 24))
    xm, ym = np.abs(x), np.abs(y)
    L = ym.max()
    ref = np.mean([skm.structural_similarity(a, b, gaussian_weights=True, sigma=1.5,
                                             use_sample_covariance=False, data_range=L)
                   for a, b in zip(xm, ym)])
    assert ssim(x, y) == pytest.approx(ref, abs=1e-8)


def test_ssim_identity_and_flat_luminance():
    x, y = pair(1)
    assert ssim(y, y) == pytest.approx(1.0, abs=1e-12)
    flat_y = np.full((2, 12, 12), 0.4)
    flat_x = np.full((2, 12, 12), 1.4)
    # zero variance leaves the luminance term times c2 / c2
    L = 0.4
    c1 = (0.01 * L) ** 2
    expect = (2 * 1.4 * 0.4 + c1) / (1.4 ** 2 + 0.4 ** 2 + c1)
    assert ssim(flat_x, flat_y) == pytest.approx(expect, abs=1e-12)
    assert ssim(flat_x, flat_y) < 1.0


def test_ssim_bounds_and_errors():
    x, y = pair(2)
    assert -1.0 <= ssim(x, y) <= 1.0
    with pytest.raises(FrameTooSmall):
        ssim(np.ones((1, 10, 16)), np.ones((1, 10, 16)))
    with pytest.raises(ShapeMismatch):
        ssim(np.ones((1, 12, 12)), np.ones((1, 12, 13)))
    with pytest.raises(ZeroReference):
        ssim(np.ones((1, 12, 12)), np.zeros((1, 12, 12)))


def test_metric_errors():
    with pytest.raises(ZeroReference):
        nmse(np.ones(3), np.zeros(3))
    with pytest.raises(ZeroReference):
        psnr(np.ones(3), np.zeros(3))
    with pytest.raises(ShapeMismatch):
        psnr(np.ones(3), np.ones(4))


def test_nmse_parseval_invariance():
    x, y = pair(4)
    kx, ky = fftc(x, (-2, -1)), fftc(y, (-2, -1))
    assert nmse(kx, ky) == pytest.approx(nmse(x, y), abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0.01, 1.0), st.floats(1.1, 4.0))
def test_psnr_monotone_in_error(seed, noise, factor):
    x, y = pair(seed, (2, 4, 4), noise)
    worse = y + factor * (x - y)
    assert psnr(worse, y) < psnr(x, y)
    assert nmse(worse, y) > nmse(x, y) >= 0


def test_region_psnr():
    x, y = pair(5)
    full = np.ones((16, 16), bool)
    assert region_psnr(x, y, full) == pytest.approx(psnr(x, y), abs=1e-12)
    one = np.zeros((16, 16), bool)
    one[3, 7] = True
    a, b = x[:, 3, 7], y[:, 3, 7]
    expect = 10 * np.log10(np.max(np.abs(b)) ** 2 / np.mean(np.abs(a - b) ** 2))
    assert region_psnr(x, y, one) == pytest.approx(expect, abs=1e-10)
    with pytest.raises(EmptyRegion):
        region_psnr(x, y, np.zeros((16, 16), bool))
    with pytest.raises(ShapeMismatch):
        region_psnr(x, y, np.ones((4, 4), bool))


def test_report_aggregates_and_round_trip(tmp_path):
    region = np.zeros((16, 16), bool)
    region[4:8, 4:8] = True
    recons, truths = zip(*(pair(s) for s in range(3)))
    vols = lambda arrs: [ComplexVolume(a, Domain.IMAGE_TIME) for a in arrs]
    rep = evaluate(vols(recons), vols(truths), region, method="test", acceleration=8)
    assert len(rep.per_volume) == 3
    agg = rep.aggregate()
    for name in ("nmse", "psnr", "ssim", "heart_psnr"):
        vals = [e[name] for e in rep.per_volume]
        assert agg[name]["mean"] == pytest.approx(np.mean(vals))
        assert agg[name]["std"] == pytest.approx(np.std(vals))
    p = tmp_path / "r.json"
    rep.save(p)
    back = MetricsReport.load(p)
    assert back.to_json() == rep.to_json()
    assert json.loads(p.read_text())["metadata"]["method"] == "test"
    single = evaluate(ComplexVolume(recons[0]), ComplexVolume(truths[0]))
    assert single.per_volume[0]["heart_psnr"] is None
    assert "heart_psnr" not in single.aggregate()
    assert evaluate_volume(recons[0], truths[0], region)["heart_psnr"] == rep.per_volume[0]["heart_psnr"]
    with pytest.raises(ShapeMismatch):
        evaluate(vols(recons), vols(truths[:2]))
