"""Quality metrics for complex 2D+time reconstructions.

PSNR and NMSE use the complex difference; SSIM is computed per frame on
magnitude images with an 11-tap Gaussian window (sigma 1.5, valid region
only) and averaged over frames. The data range for SSIM, and the peak for
PSNR, is the maximum magnitude of the reference.
"""
import json
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from .errors import EmptyRegion, FrameTooSmall, ShapeMismatch, ZeroReference

PSNR_CAP = 200.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _arrays(x, y):
    a = np.asarray(getattr(x, "data", x))
    b = np.asarray(getattr(y, "data", y))
    if a.shape != b.shape:
        raise ShapeMismatch(f"shapes differ: {a.shape} vs {b.shape}")
    return a, b


def nmse(x, y_ref):
    a, b = _arrays(x, y_ref)
    ref = float(np.sum(np.abs(b) ** 2))
    if ref == 0.0:
        raise ZeroReference("reference volume is identically zero")
    return float(np.sum(np.abs(a - b) ** 2) / ref)


def _psnr(a, b):
    peak = float(np.max(np.abs(b)))
    if peak == 0.0:
        raise ZeroReference("reference volume is identically zero")
    mse = float(np.mean(np.abs(a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(peak ** 2 / mse)))


def psnr(x, y_ref):
    a, b = _arrays(x, y_ref)
    return _psnr(a, b)


def region_psnr(x, y_ref, region):
    """PSNR over the pixels of an H x W region, across all frames."""
    a, b = _arrays(x, y_ref)
    region = np.asarray(region, dtype=bool)
    if region.shape != a.shape[-2:]:
        raise ShapeMismatch(f"region {region.shape} does not match frames {a.shape[-2:]}")
    if not region.any():
        raise EmptyRegion("region contains no pixels")
    return _psnr(a[..., region], b[..., region])


def gaussian_window(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-0.5 * (r / sigma) ** 2)
    return g / g.sum()


def _filter_valid(img, g):
    # separable valid-mode correlation over the last two axes
    n = g.size
    out = np.lib.stride_tricks.sliding_window_view(img, n, axis=-2) @ g
    return np.lib.stride_tricks.sliding_window_view(out, n, axis=-1) @ g


def ssim_map(x_mag, y_mag, data_range):
    g = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_x = _filter_valid(x_mag, g)
    mu_y = _filter_valid(y_mag, g)
    sxx = _filter_valid(x_mag * x_mag, g) - mu_x ** 2
    syy = _filter_valid(y_mag * y_mag, g) - mu_y ** 2
    sxy = _filter_valid(x_mag * y_mag, g) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    return num / den


def ssim(x, y_ref):
    a, b = _arrays(x, y_ref)
    if a.ndim == 2:
        a, b = a[None], b[None]
    if a.shape[-1] < SSIM_WINDOW or a.shape[-2] < SSIM_WINDOW:
        raise FrameTooSmall(f"frames must be at least {SSIM_WINDOW} x {SSIM_WINDOW}")
    xm, ym = np.abs(a), np.abs(b)
    data_range = float(ym.max())
    if data_range == 0.0:
        raise ZeroReference("reference volume is identically zero")
    per_frame = ssim_map(xm, ym, data_range).mean(axis=(-2, -1))
    return float(np.clip(per_frame.mean(), -1.0, 1.0))


METRIC_NAMES = ("nmse", "psnr", "ssim", "heart_psnr")


@dataclass
class MetricsReport:
    per_volume: List[Dict[str, Optional[float]]] = field(default_factory=list)
    metadata: Dict[str, object] = field(default_factory=dict)

    def add(self, entry):
        self.per_volume.append(dict(entry))

    def aggregate(self):
        agg = {}
        for name in METRIC_NAMES:
            vals = [e[name] for e in self.per_volume if e.get(name) is not None]
            if vals:
                agg[name] = {"mean": float(np.mean(vals)), "std": float(np.std(vals))}
        return agg

    def mean(self, name):
        return self.aggregate()[name]["mean"]

    def to_dict(self):
        return {"metadata": self.metadata, "per_volume": self.per_volume,
                "aggregate": self.aggregate()}

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d):
        return cls(per_volume=[dict(e) for e in d["per_volume"]], metadata=dict(d["metadata"]))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def evaluate_volume(recon, truth, heart_region=None):
    entry = {
        "nmse": nmse(recon, truth),
        "psnr": psnr(recon, truth),
        "ssim": ssim(recon, truth),
        "heart_psnr": None,
    }
    if heart_region is not None:
        entry["heart_psnr"] = region_psnr(recon, truth, heart_region)
    return entry


def evaluate(recon, truth, heart_region=None, **metadata):
    """Build a report from one volume or from parallel lists of volumes.

    ``heart_region`` may be a single region or one region per volume.
    """
    if not isinstance(recon, (list, tuple)):
        recon, truth = [recon], [truth]
        heart_region = [heart_region]
    elif heart_region is None or isinstance(heart_region, np.ndarray):
        heart_region = [heart_region] * len(recon)
    if len(recon) != len(truth) or len(recon) != len(heart_region):
        raise ShapeMismatch("recon, truth and region lists differ in length")
    report = MetricsReport(metadata=dict(metadata))
    for r, t, h in zip(recon, truth, heart_region):
        report.add(evaluate_volume(r, t, h))
    return report
