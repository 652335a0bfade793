import numpy as np
import pytest

from ktrecon import report
from ktrecon.errors import MalformedFile, ShapeMismatch
from ktrecon.metrics import MetricsReport
from ktrecon.phantom import PhantomSpec, generate_phantom


def beating(amplitude=0.25):
    return generate_phantom(PhantomSpec(T=16, H=24, W=24, heart_radius=4.0, beat_amplitude=amplitude,
                                        frame_interval=60.0, heart_rate=125.0))


def test_self_comparison_has_zero_error():
    p = beating()
    panels = report.profile_panels(p.truth, p.truth)
    for k in ("error_frame", "error_xt", "error_xf"):
        assert np.all(panels[k] == 0)
    np.testing.assert_array_equal(panels["recon_xt"], panels["truth_xt"])


def test_panel_shapes():
    p = beating()
    panels = report.profile_panels(p.truth, p.truth, column=5)
    assert panels["truth_frame"].shape == (24, 24)
    assert panels["truth_xt"].shape == (24, 16)
    assert panels["truth_xf"].shape == (24, 16)
    with pytest.raises(ShapeMismatch):
        report.profile_panels(p.truth, p.truth, column=24)
    with pytest.raises(ShapeMismatch):
        report.profile_panels(p.truth.data[:4], p.truth)


def test_static_xf_only_dc_row():
    p = beating(amplitude=0.0)
    xf = report.profile_panels(p.truth, p.truth)["truth_xf"]
    assert np.max(np.delete(xf, 8, axis=1)) < 1e-10
    assert np.max(xf[:, 8]) > 0.1


def test_beating_xf_has_sidebands():
    # 125 bpm over 16 x 60 ms: the fundamental sits two bins from DC
    p = beating()
    xf = report.profile_panels(p.truth, p.truth)["truth_xf"]
    energy = (xf ** 2).sum(axis=0)
    assert energy[6] > 1e-3 * energy[8] and energy[10] > 1e-3 * energy[8]
    assert energy[7] < 1e-12 * energy[8]


def test_pgm_round_trip(tmp_path, rng):
    img = rng.uniform(0, 1, (7, 5))
    report.write_pgm(tmp_path / "a.pgm", img)
    back = report.read_pgm(tmp_path / "a.pgm")
    assert back.shape == (7, 5)
    assert np.max(np.abs(back / 255.0 - img)) <= 0.5 / 255 + 1e-12
    (tmp_path / "b.pgm").write_bytes(b"P2\n1 1\n255\n0")
    with pytest.raises(MalformedFile):
        report.read_pgm(tmp_path / "b.pgm")


def test_render_writes_every_panel_deterministically(tmp_path):
    p = beating()
    noisy = p.truth.data + 0.01
    a = report.render_profiles(noisy, p.truth, tmp_path / "a")
    b = report.render_profiles(noisy, p.truth, tmp_path / "b")
    assert len(a) == 13
    for k in a:
        assert open(a[k], "rb").read() == open(b[k], "rb").read()
    truth_frame = report.read_pgm(a["truth_frame"])
    assert truth_frame.max() == 255


def test_reduced_range_saturates_more():
    p = beating()
    disp = report._display(report.profile_panels(p.truth, p.truth))
    assert np.sum(disp["truth_xf_reduced"] >= 1) > np.sum(disp["truth_xf"] >= 1)


def test_loss_trace_round_trip(tmp_path):
    trace = [(0, 0.5), (1, 0.25), (2, 1 / 3)]
    report.write_loss_trace(trace, tmp_path / "l.tsv")
    assert report.read_loss_trace(tmp_path / "l.tsv") == trace
    report.plot_loss(trace, tmp_path / "l.png")
    assert (tmp_path / "l.png").stat().st_size > 0
    (tmp_path / "bad.tsv").write_text("a\tb\n")
    with pytest.raises(MalformedFile):
        report.read_loss_trace(tmp_path / "bad.tsv")


def test_metrics_table():
    r = MetricsReport()
    r.add({"nmse": 0.1, "psnr": 20.0, "ssim": 0.5, "heart_psnr": None})
    r.add({"nmse": 0.3, "psnr": 22.0, "ssim": 0.7, "heart_psnr": None})
    lines = report.metrics_table({"zf": r}).splitlines()
    assert lines[0].split("\t")[:3] == ["method", "nmse_mean", "nmse_std"]
    row = lines[1].split("\t")
    assert row[0] == "zf" and float(row[1]) == pytest.approx(0.2) and float(row[2]) == pytest.approx(0.1)
    assert row[-1] == "nan"
