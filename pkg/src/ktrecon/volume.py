"""Complex 2D+time volumes, centered orthonormal Fourier transforms and the
``.ktv`` volume file format.

All volumes are stored as ``(T, H, W)`` complex128 arrays. ``H`` is the
frequency-encode (readout) axis and ``W`` the phase-encode axis, so in
k-space ``W`` is the ``Ky`` dimension addressed by sampling masks.
"""
import enum
from dataclasses import dataclass

import numpy as np

from ._fileio import read_container, require_keys, write_container
from .errors import DataError, MalformedFile, NonFiniteData, ShapeMismatch, ZeroVolume

VOLUME_MAGIC = "KTRECON-VOLUME 1"


class Domain(str, enum.Enum):
    IMAGE_TIME = "IMAGE_TIME"
    IMAGE_TEMPFREQ = "IMAGE_TEMPFREQ"
    KSPACE_TIME = "KSPACE_TIME"


@dataclass(frozen=True, eq=False)
class ComplexVolume:
    data: np.ndarray
    domain: Domain = Domain.IMAGE_TIME

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ShapeMismatch(f"volume data must be a non-empty T x H x W array, got {data.shape}")
        data = data.astype(np.complex128, copy=False)
        if not np.all(np.isfinite(data)):
            raise NonFiniteData("volume contains non-finite samples")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "domain", Domain(self.domain))

    @property
    def shape(self):
        return self.data.shape

    @property
    def frames(self):
        return self.data.shape[0]

    @property
    def height(self):
        return self.data.shape[1]

    @property
    def width(self):
        return self.data.shape[2]

    def with_data(self, data, domain=None):
        return ComplexVolume(data, self.domain if domain is None else domain)

    def norm(self):
        return float(np.linalg.norm(self.data))


def _expect(v, domain, op):
    if v.domain != domain:
        raise DataError(f"{op} expects a {domain.value} volume, got {v.domain.value}")


# Array-level transforms. "Centered" puts the zero frequency at index N // 2
# (ifftshift before, fftshift after); normalization is orthonormal.

def fftc(x, axes):
    x = np.fft.ifftshift(x, axes=axes)
    x = np.fft.fftn(x, axes=axes, norm="ortho")
    return np.fft.fftshift(x, axes=axes)


def ifftc(x, axes):
    x = np.fft.ifftshift(x, axes=axes)
    x = np.fft.ifftn(x, axes=axes, norm="ortho")
    return np.fft.fftshift(x, axes=axes)


def spatial_fft2c(v):
    _expect(v, Domain.IMAGE_TIME, "spatial_fft2c")
    return ComplexVolume(fftc(v.data, (-2, -1)), Domain.KSPACE_TIME)


def spatial_ifft2c(v):
    _expect(v, Domain.KSPACE_TIME, "spatial_ifft2c")
    return ComplexVolume(ifftc(v.data, (-2, -1)), Domain.IMAGE_TIME)


def temporal_fft1c(v):
    _expect(v, Domain.IMAGE_TIME, "temporal_fft1c")
    return ComplexVolume(fftc(v.data, (0,)), Domain.IMAGE_TEMPFREQ)


def temporal_ifft1c(v):
    _expect(v, Domain.IMAGE_TEMPFREQ, "temporal_ifft1c")
    return ComplexVolume(ifftc(v.data, (0,)), Domain.IMAGE_TIME)


def normalize(v):
    """Scale ``v`` to unit peak magnitude.

    Returns the normalized volume and the scale that restores the original
    (``original = normalized * scale``).
    """
    scale = float(np.max(np.abs(v.data)))
    if scale == 0.0:
        raise ZeroVolume("cannot normalize an all-zero volume")
    return v.with_data(v.data / scale), scale


def save_volume(v, path, scale=1.0):
    header = {
        "T": v.frames,
        "H": v.height,
        "W": v.width,
        "domain": v.domain.value,
        "scale": float(scale),
    }
    payload = np.empty(v.shape + (2,), dtype="<f4")
    payload[..., 0] = v.data.real
    payload[..., 1] = v.data.imag
    write_container(path, VOLUME_MAGIC, header, payload.tobytes(order="C"))


def load_volume(path, with_scale=False):
    """Read a ``.ktv`` file. With ``with_scale`` also return the header scale."""
    header, payload = read_container(path, VOLUME_MAGIC)
    require_keys(header, ("T", "H", "W", "domain", "scale"), path)
    try:
        t, h, w = (int(header[k]) for k in ("T", "H", "W"))
        domain = Domain(header["domain"])
        scale = float(header["scale"])
    except (TypeError, ValueError) as exc:
        raise MalformedFile(f"{path}: bad header field ({exc})") from None
    if min(t, h, w) < 1:
        raise MalformedFile(f"{path}: non-positive dimensions in header")
    expected = t * h * w * 8
    if len(payload) != expected:
        raise MalformedFile(f"{path}: payload has {len(payload)} bytes, expected {expected}")
    flat = np.frombuffer(payload, dtype="<f4").reshape(t, h, w, 2)
    if not np.all(np.isfinite(flat)):
        raise MalformedFile(f"{path}: payload contains non-finite values")
    v = ComplexVolume(flat[..., 0].astype(np.float64) + 1j * flat[..., 1].astype(np.float64), domain)
    return (v, scale) if with_scale else v
