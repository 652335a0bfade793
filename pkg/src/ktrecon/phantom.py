"""Synthetic complex-valued dynamic cardiac phantoms.

The scene is a static torso (ellipse plus a few internal structures) with a
beating circular heart. The heart is a bright blood pool inside a darker
myocardial wall; its radius oscillates sinusoidally at the heart rate. An
optional slow sinusoidal translation of the whole field mimics maternal
breathing. Every shape is rendered with a one-pixel linear coverage ramp
across its boundary, so intensities change smoothly as shapes move.
"""
from dataclasses import dataclass, field, replace
from typing import Optional, Tuple

import numpy as np

from .errors import InvalidSpec
from .volume import ComplexVolume, Domain

BREATHING_PERIOD_MS = 4000.0
WALL_FRACTION = 0.35

# (center_y, center_x, semi_y, semi_x, intensity), all geometric entries as
# fractions of H or W measured from the grid center.
_BACKGROUND = (
    (0.00, 0.00, 0.42, 0.46, 0.45),
    (0.30, 0.00, 0.06, 0.08, 0.85),
    (-0.18, -0.22, 0.12, 0.10, 0.25),
    (-0.10, 0.25, 0.08, 0.12, 0.65),
)


@dataclass(frozen=True)
class PhantomSpec:
    T: int = 32
    H: int = 96
    W: int = 96
    frame_interval: float = 72.0  # ms
    heart_rate: float = 140.0  # bpm
    heart_radius: Optional[float] = None  # px; default 0.09 * min(H, W)
    beat_amplitude: float = 0.25
    heart_center: Optional[Tuple[float, float]] = None  # (h, w) px
    background_drift: float = 0.0  # peak px/frame
    noise_sigma: float = 0.0
    phase_texture: bool = True
    seed: int = 0

    def radius(self):
        if self.heart_radius is not None:
            return float(self.heart_radius)
        return 0.09 * min(self.H, self.W)

    def center(self):
        if self.heart_center is not None:
            return float(self.heart_center[0]), float(self.heart_center[1])
        return 0.5 * (self.H - 1) + 0.06 * self.H, 0.5 * (self.W - 1) - 0.08 * self.W

    def drift_amplitude(self):
        """Peak displacement (px) of the breathing translation."""
        period = BREATHING_PERIOD_MS / self.frame_interval
        return self.background_drift * period / (2.0 * np.pi)


@dataclass
class DynamicPhantom:
    truth: ComplexVolume
    heart_region: np.ndarray
    spec: PhantomSpec = field(repr=False)


PRESETS = {
    "fetal": PhantomSpec(T=32, H=96, W=96, frame_interval=72.0, heart_rate=140.0,
                         heart_radius=8.0, beat_amplitude=0.25, background_drift=0.05),
    "adult": PhantomSpec(T=20, H=160, W=160, frame_interval=40.0, heart_rate=75.0,
                         heart_radius=22.0, beat_amplitude=0.2, background_drift=0.0),
    # the desk-scale training geometry
    "desk": PhantomSpec(T=16, H=32, W=32, frame_interval=72.0, heart_rate=140.0,
                        heart_radius=4.0, beat_amplitude=0.25, background_drift=0.0),
}


def preset(name, **overrides):
    try:
        base = PRESETS[name]
    except KeyError:
        raise InvalidSpec(f"unknown phantom preset {name!r}") from None
    return replace(base, **overrides)


def validate_spec(spec):
    if min(spec.T, spec.H, spec.W) < 1:
        raise InvalidSpec("T, H and W must be positive")
    if spec.frame_interval <= 0 or spec.heart_rate <= 0:
        raise InvalidSpec("frame_interval and heart_rate must be positive")
    if spec.noise_sigma < 0:
        raise InvalidSpec("noise_sigma must be non-negative")
    if spec.beat_amplitude < 0 or spec.beat_amplitude >= 1:
        raise InvalidSpec("beat_amplitude must lie in [0, 1)")
    r = spec.radius()
    if r < 0:
        raise InvalidSpec("heart_radius must be non-negative")
    if spec.beat_amplitude > 0:
        period_ms = 60000.0 / spec.heart_rate
        if spec.T * spec.frame_interval < period_ms:
            raise InvalidSpec(
                f"{spec.T} frames of {spec.frame_interval} ms do not span one cardiac period "
                f"({period_ms:.1f} ms)")
    outer = r * (1.0 + spec.beat_amplitude) * (1.0 + WALL_FRACTION) + abs(spec.drift_amplitude())
    ch, cw = spec.center()
    if r > 0 and (ch - outer < 0 or cw - outer < 0
                  or ch + outer > spec.H - 1 or cw + outer > spec.W - 1):
        raise InvalidSpec("heart does not fit inside the grid at maximum dilation")


def _disk(yy, xx, cy, cx, r):
    d = np.hypot(yy - cy, xx - cx) - r
    return np.clip(0.5 - d, 0.0, 1.0)


def _ellipse(yy, xx, cy, cx, ay, ax):
    dy, dx = (yy - cy) / ay, (xx - cx) / ax
    rho = np.hypot(dy, dx)
    grad = np.hypot(dy / ay, dx / ax)
    # first-order signed distance to the boundary rho == 1
    d = np.where(rho > 0, (rho - 1.0) * rho / np.maximum(grad, 1e-12), -min(ay, ax))
    return np.clip(0.5 - d, 0.0, 1.0)


def heart_radius_at(spec, t):
    phase = 2.0 * np.pi * spec.heart_rate / 60000.0 * spec.frame_interval * t
    return spec.radius() * (1.0 + spec.beat_amplitude * np.sin(phase))


def _shift_at(spec, t):
    if spec.background_drift == 0:
        return 0.0
    period = BREATHING_PERIOD_MS / spec.frame_interval
    return spec.drift_amplitude() * np.sin(2.0 * np.pi * t / period)


def _render_frame(spec, t, yy, xx):
    shift = _shift_at(spec, t)
    y = yy - shift
    h0, w0 = 0.5 * (spec.H - 1), 0.5 * (spec.W - 1)
    img = np.zeros_like(yy)
    for fy, fx, sy, sx, val in _BACKGROUND:
        cov = _ellipse(y, xx, h0 + fy * spec.H, w0 + fx * spec.W, sy * spec.H, sx * spec.W)
        img = img * (1.0 - cov) + val * cov
    r = heart_radius_at(spec, t)
    heart = np.zeros_like(yy)
    if spec.radius() > 0:
        ch, cw = spec.center()
        wall = _disk(y, xx, ch, cw, r * (1.0 + WALL_FRACTION))
        pool = _disk(y, xx, ch, cw, r)
        img = img * (1.0 - wall) + 0.3 * wall
        img = img * (1.0 - pool) + 1.0 * pool
        heart = wall
    return img, heart


def generate_phantom(spec):
    validate_spec(spec)
    rng = np.random.default_rng(spec.seed)
    yy, xx = np.meshgrid(np.arange(spec.H, dtype=float), np.arange(spec.W, dtype=float),
                         indexing="ij")
    frames = np.empty((spec.T, spec.H, spec.W))
    region = np.zeros((spec.H, spec.W), dtype=bool)
    for t in range(spec.T):
        frames[t], heart = _render_frame(spec, t, yy, xx)
        region |= heart > 0

    data = frames.astype(np.complex128)
    # phase ramp and noise draws happen unconditionally so the random stream
    # for a given seed does not depend on which features are switched on
    g = rng.uniform(-1.0, 1.0, size=2)
    phi0 = rng.uniform(-np.pi, np.pi)
    if spec.phase_texture:
        phase = np.pi * (g[0] * (yy - 0.5 * spec.H) / spec.H + g[1] * (xx - 0.5 * spec.W) / spec.W)
        data = data * np.exp(1j * (phase + phi0))[None]
    noise = rng.standard_normal((2,) + data.shape)
    if spec.noise_sigma > 0:
        data = data + spec.noise_sigma / np.sqrt(2.0) * (noise[0] + 1j * noise[1])
    data = data / np.max(np.abs(data))
    return DynamicPhantom(ComplexVolume(data, Domain.IMAGE_TIME), region, spec)


def heart_region_metric_mask(p):
    return p.heart_region.copy()
