"""Attention-based dynamic reconstruction network (encoder / bottleneck /
decoder with factorised spatial and temporal self-attention).

The network runs in the image domain on the zero-filled sequence, optionally
with the temporal axis replaced by its temporal-frequency spectrum. A hard
data-consistency projection in k-space closes the pipeline.
"""
import json
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np

from .errors import InvalidSpec, OddSpatialDim, ShapeMismatch, ZeroVolume
from .nn.layers import (AttentionConfig, AttentionSpatial, AttentionTemporal, ConvDown,
                        ConvPointwise, ConvSpatial, ConvUp, GroupNorm, Identity, Module,
                        ParamStore, ResnetBlock, ACTIVATIONS)
from .nn.tensor import Tensor, concat, make_result
from .sampling import SamplingMask
from .volume import ComplexVolume, Domain, fftc, ifftc

TIME = "TIME"
FREQUENCY = "FREQUENCY"
ENABLED = "ENABLED"
DISABLED = "DISABLED"


@dataclass(frozen=True)
class DcraNetConfig:
    base_channels: int = 16
    levels: int = 2
    heads: int = 4
    head_dim: int = 8
    temporal_representation: str = FREQUENCY
    data_consistency: str = ENABLED
    skip_connections: bool = True
    activation: str = "silu"
    norm: bool = True
    spatial_mixing: bool = True
    temporal_encoding: int = 0
    dc_weight: Optional[float] = None
    seed: int = 0

    def __post_init__(self):
        if self.levels < 1:
            raise InvalidSpec("levels must be at least 1")
        if self.base_channels < 1 or self.heads < 1 or self.head_dim < 1:
            raise InvalidSpec("channel and head sizes must be positive")
        if self.temporal_representation not in (TIME, FREQUENCY):
            raise InvalidSpec(f"unknown temporal representation {self.temporal_representation!r}")
        if self.data_consistency not in (ENABLED, DISABLED):
            raise InvalidSpec(f"unknown data consistency mode {self.data_consistency!r}")
        if self.activation not in ACTIVATIONS:
            raise InvalidSpec(f"unknown activation {self.activation!r}")
        if self.temporal_encoding < 0:
            raise InvalidSpec("temporal_encoding must be non-negative")
        if self.dc_weight is not None and not 0.0 <= self.dc_weight <= 1.0:
            raise InvalidSpec("dc_weight must lie in [0, 1]")

    @property
    def attention(self):
        return AttentionConfig(self.heads, self.head_dim)

    def encoder_channels(self):
        return [self.base_channels * 2 ** i for i in range(self.levels)]

    def decoder_channels(self):
        top = self.encoder_channels()[-1]
        out = [top // 2 ** (j + 1) for j in range(self.levels - 1)]
        out.append(out[-1] if out else top)
        return out

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise InvalidSpec(f"unknown network config keys: {', '.join(sorted(unknown))}")
        return cls(**d)

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


FULL_SCALE_CONFIG = DcraNetConfig(base_channels=64, levels=3, heads=8, head_dim=32)


@dataclass
class ReconRequest:
    measured: ComplexVolume
    mask: SamplingMask

    def __post_init__(self):
        if self.measured.domain != Domain.KSPACE_TIME:
            raise ShapeMismatch("measured data must be a k-space volume")
        if self.measured.frames != self.mask.frames or self.measured.width != self.mask.lines:
            raise ShapeMismatch(f"mask {self.mask.grid.shape} does not match measured {self.measured.shape}")


# complex <-> two-channel helpers and the differentiable linear maps -------

def to_channels(z):
    """``(T, H, W)`` complex -> ``(1, 2, T, H, W)`` real."""
    return np.stack([z.real, z.imag])[None]


def from_channels(x):
    return x[0, 0] + 1j * x[0, 1]


def _complex_map(x, fwd, adj):
    def apply(f, a):
        z = f(a[:, 0] + 1j * a[:, 1])
        return np.stack([z.real, z.imag], axis=1)

    return make_result(apply(fwd, x.data), (x,), lambda g: (apply(adj, g),))


def temporal_ifft_channels(x):
    """Inverse centered temporal DFT on a two-channel ``(B, 2, T, H, W)`` tensor."""
    return _complex_map(x, lambda z: ifftc(z, (1,)), lambda z: fftc(z, (1,)))


def temporal_fft_channels(x):
    return _complex_map(x, lambda z: fftc(z, (1,)), lambda z: ifftc(z, (1,)))


def data_consistency_layer(x, measured, sel, weight=None):
    """Image-domain DC: ``F^H(where(sel, measured, F x))`` on two channels.

    ``measured`` is the complex ``(T, H, W)`` k-space and ``sel`` a boolean
    array broadcastable to it. With ``weight`` the sampled entries become
    ``(1 - weight) * F x + weight * measured``.
    """
    z = x.data[:, 0] + 1j * x.data[:, 1]
    k = fftc(z, (-2, -1))
    if weight is None:
        k = np.where(sel, measured, k)
        keep = 0.0
    else:
        k = np.where(sel, (1.0 - weight) * k + weight * measured, k)
        keep = 1.0 - weight
    img = ifftc(k, (-2, -1))
    out = np.stack([img.real, img.imag], axis=1)

    def backward(g):
        gk = fftc(g[:, 0] + 1j * g[:, 1], (-2, -1))
        gk = np.where(sel, keep * gk, gk)
        gi = ifftc(gk, (-2, -1))
        return (np.stack([gi.real, gi.imag], axis=1),)

    return make_result(out, (x,), backward)


def temporal_encoding_channels(shape, pairs):
    """Fixed sinusoids of the centered frame (or bin) index, constant over space.

    Returns ``(1, 2 * pairs, T, H, W)``. Without them the trunk is equivariant
    to permutations of the temporal axis and cannot tell bins apart.
    """
    _, _, T, H, W = shape
    f = np.arange(T) - T // 2
    feats = []
    for k in range(1, pairs + 1):
        feats += [np.cos(2 * np.pi * k * f / T), np.sin(2 * np.pi * k * f / T)]
    enc = np.stack(feats)[:, :, None, None]
    return np.broadcast_to(enc, (2 * pairs, T, H, W))[None].copy()


# network blocks -----------------------------------------------------------

class _Stage(Module):
    """Two ResNet blocks, spatial then temporal attention, then resampling."""

    def __init__(self, cin, cout, cfg, rng, resample):
        spatial = cfg.spatial_mixing
        kw = dict(activation=cfg.activation, norm=cfg.norm, spatial=spatial)
        self.res1 = ResnetBlock(cin, cout, rng, **kw)
        self.res2 = ResnetBlock(cout, cout, rng, **kw)
        self.sattn = AttentionSpatial(cout, cfg.attention, rng) if spatial else None
        self.tattn = AttentionTemporal(cout, cfg.attention, rng)
        if not spatial:
            self.resample = ConvPointwise(cout, cout, rng)
        elif resample == "down":
            self.resample = ConvDown(cout, cout, rng)
        else:
            self.resample = ConvUp(cout, cout, rng)

    def forward(self, x):
        h = self.res2(self.res1(x))
        if self.sattn is not None:
            h = self.sattn(h)
        return self.resample(self.tattn(h))


class _Bottleneck(Module):
    def __init__(self, ch, cfg, rng):
        kw = dict(activation=cfg.activation, norm=cfg.norm, spatial=cfg.spatial_mixing)
        self.res1 = ResnetBlock(ch, ch, rng, **kw)
        self.sattn = AttentionSpatial(ch, cfg.attention, rng) if cfg.spatial_mixing else None
        self.tattn = AttentionTemporal(ch, cfg.attention, rng)
        self.res2 = ResnetBlock(ch, ch, rng, **kw)

    def forward(self, x):
        h = self.res1(x)
        if self.sattn is not None:
            h = self.sattn(h)
        return self.res2(self.tattn(h))


class DcraNet(Module):
    def __init__(self, cfg=DcraNetConfig()):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        C = cfg.base_channels
        enc = cfg.encoder_channels()
        dec = cfg.decoder_channels()
        skip = cfg.skip_connections

        first = ConvSpatial if cfg.spatial_mixing else ConvPointwise
        self.init_conv = first(2 + 2 * cfg.temporal_encoding, C, rng)
        self.init_tattn = AttentionTemporal(C, cfg.attention, rng)

        self.encoder = []
        cin = C
        for cout in enc:
            self.encoder.append(_Stage(cin, cout, cfg, rng, "down"))
            cin = cout
        self.bottleneck = _Bottleneck(cin, cfg, rng)
        self.decoder = []
        for j, cout in enumerate(dec):
            extra = enc[cfg.levels - 1 - j] if skip else 0
            self.decoder.append(_Stage(cin + extra, cout, cfg, rng, "up"))
            cin = cout
        cin += C if skip else 0
        self.final_norm = GroupNorm(cin) if cfg.norm else Identity()
        self.final_conv = ConvPointwise(cin, 2, rng)
        self.act = ACTIVATIONS[cfg.activation]

    # pipeline pieces --------------------------------------------------

    def check_input(self, shape):
        T, H, W = shape
        f = 2 ** self.cfg.levels
        if self.cfg.spatial_mixing and (H % f or W % f):
            raise OddSpatialDim(f"H and W must be divisible by {f}, got {H}x{W}")

    def preprocess(self, req):
        """Zero-filled network input and its normalization scale."""
        self.check_input(req.measured.shape)
        x0 = ifftc(req.measured.data, (-2, -1))
        scale = float(np.max(np.abs(x0)))
        if scale == 0.0:
            raise ZeroVolume("zero-filled input is identically zero")
        x0 = x0 / scale
        if self.cfg.temporal_representation == FREQUENCY:
            x0 = fftc(x0, (0,))
        x = to_channels(x0)
        if self.cfg.temporal_encoding:
            x = np.concatenate([x, temporal_encoding_channels(x.shape, self.cfg.temporal_encoding)], axis=1)
        return Tensor(x), scale

    def trunk(self, x):
        h = self.init_tattn(self.init_conv(x))
        first = h
        skips = []
        for stage in self.encoder:
            h = stage(h)
            skips.append(h)
        h = self.bottleneck(h)
        for j, stage in enumerate(self.decoder):
            if self.cfg.skip_connections:
                h = concat([h, skips[self.cfg.levels - 1 - j]], axis=1)
            h = stage(h)
        if self.cfg.skip_connections:
            h = concat([h, first], axis=1)
        return self.final_conv(self.act(self.final_norm(h)))

    def postprocess(self, y, scale, req):
        if self.cfg.temporal_representation == FREQUENCY:
            y = temporal_ifft_channels(y)
        y = y * scale
        if self.cfg.data_consistency == ENABLED:
            sel = req.mask.grid[:, None, :]
            y = data_consistency_layer(y, req.measured.data, sel, self.cfg.dc_weight)
        return y

    def forward(self, req):
        """Differentiable reconstruction as a ``(1, 2, T, H, W)`` tensor."""
        x, scale = self.preprocess(req)
        return self.postprocess(self.trunk(x), scale, req)

    def reconstruct(self, req):
        return ComplexVolume(from_channels(self.forward(req).data), Domain.IMAGE_TIME)

    def params(self):
        return ParamStore.from_module(self, {"config": self.cfg.to_dict()})

    def load_params(self, store):
        store.load_into(self)

    def count_parameters(self):
        return int(sum(p.size for p in self.parameters()))


def forward(req, cfg, params=None):
    """Reconstruct ``req`` with a network built from ``cfg`` and ``params``."""
    net = DcraNet(cfg)
    if params is not None:
        net.load_params(params)
    return net.reconstruct(req)


def count_parameters(cfg):
    return DcraNet(cfg).count_parameters()
