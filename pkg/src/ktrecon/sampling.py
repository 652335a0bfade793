"""k-t undersampling masks, the masking encoder and hard data consistency.

A mask is a ``(T, Ky)`` boolean grid: sampling line ``ky`` in frame ``t``
acquires the whole readout ``(t, :, ky)`` of the k-space volume.
"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._fileio import read_container, require_keys, write_container
from .errors import InvalidAcceleration, InvalidDensity, MalformedFile, ShapeMismatch
from .volume import ComplexVolume, Domain, spatial_fft2c

MASK_MAGIC = "KTRECON-MASK 1"


@dataclass(frozen=True, eq=False)
class SamplingMask:
    grid: np.ndarray
    acceleration: int = 1
    kind: str = "custom"
    seed: Optional[int] = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=bool)
        if grid.ndim != 2 or min(grid.shape) < 1:
            raise ShapeMismatch(f"mask grid must be a non-empty T x Ky array, got {grid.shape}")
        object.__setattr__(self, "grid", grid)

    @property
    def frames(self):
        return self.grid.shape[0]

    @property
    def lines(self):
        return self.grid.shape[1]

    def sampled_lines(self, t):
        return np.flatnonzero(self.grid[t])

    def __eq__(self, other):
        return isinstance(other, SamplingMask) and np.array_equal(self.grid, other.grid)

    def __hash__(self):
        return hash(self.grid.tobytes())


def _check_accel(R, Ky):
    if int(R) != R or R < 1 or R > Ky:
        raise InvalidAcceleration(f"acceleration must be an integer in [1, {Ky}], got {R}")
    return int(R)


def lattice_mask(T, Ky, R, shear=1, offset=0):
    """Sheared lattice: frame ``t`` samples ``ky`` with ``ky % R == (offset + t*shear) % R``."""
    R = _check_accel(R, Ky)
    t = np.arange(T)[:, None]
    ky = np.arange(Ky)[None, :]
    grid = (ky % R) == ((offset + t * shear) % R)
    return SamplingMask(grid, R, "lattice", None)


def lines_per_frame(Ky, R):
    return max(1, int(np.floor(Ky / R + 0.5)))


def vd_density(Ky, density, envelope_frac):
    """Line-selection probabilities: ``density * gauss + (1 - density) * uniform``."""
    ky = np.arange(Ky)
    sigma = envelope_frac * Ky
    gauss = np.exp(-0.5 * ((ky - Ky // 2) / sigma) ** 2)
    gauss /= gauss.sum()
    p = density * gauss + (1.0 - density) / Ky
    return p / p.sum()


def vd_random_mask(T, Ky, R, density=0.7, envelope_frac=0.2, seed=0):
    """Variable-density random mask with a fixed line count per frame.

    Each frame draws ``round(Ky / R)`` distinct lines; the center line
    ``Ky // 2`` is always one of them and the rest are drawn without
    replacement from a Gaussian-weighted distribution with a uniform floor.
    """
    R = _check_accel(R, Ky)
    if not 0.0 < density <= 1.0:
        raise InvalidDensity(f"density must lie in (0, 1], got {density}")
    if not (envelope_frac > 0.0 and np.isfinite(envelope_frac)):
        raise InvalidDensity(f"envelope_frac must be positive, got {envelope_frac}")
    n = lines_per_frame(Ky, R)
    center = Ky // 2
    p = vd_density(Ky, density, envelope_frac)
    others = np.delete(np.arange(Ky), center)
    q = np.delete(p, center)
    q = q / q.sum()
    rng = np.random.default_rng(seed)
    grid = np.zeros((T, Ky), dtype=bool)
    for t in range(T):
        grid[t, center] = True
        if n > 1:
            grid[t, rng.choice(others, size=n - 1, replace=False, p=q)] = True
    return SamplingMask(grid, R, "vdrandom", int(seed))


def full_mask(T, Ky):
    return SamplingMask(np.ones((T, Ky), dtype=bool), 1, "full", None)


def _check_pair(v, m):
    if v.frames != m.frames or v.width != m.lines:
        raise ShapeMismatch(
            f"mask {m.grid.shape} does not match volume (T={v.frames}, Ky={v.width})")


def apply_mask(full_kspace, m):
    """Encoding operator E: keep sampled readouts, zero the rest."""
    _check_pair(full_kspace, m)
    data = np.where(m.grid[:, None, :], full_kspace.data, 0.0)
    return ComplexVolume(data, Domain.KSPACE_TIME)


def undersample(truth, m):
    """Retrospective undersampling of an image sequence: ``E(F x)``."""
    return apply_mask(spatial_fft2c(truth), m)


def apply_data_consistency(pred_kspace, measured, m, weight=None):
    """Replace predicted k-space with measured samples at sampled entries.

    ``weight=None`` is hard replacement. A weight ``w`` in ``[0, 1]`` gives
    ``(1 - w) * pred + w * measured`` at sampled entries instead.
    """
    _check_pair(pred_kspace, m)
    if pred_kspace.shape != measured.shape:
        raise ShapeMismatch(f"prediction {pred_kspace.shape} vs measured {measured.shape}")
    sel = np.broadcast_to(m.grid[:, None, :], pred_kspace.shape)
    if weight is None:
        data = np.where(sel, measured.data, pred_kspace.data)
    else:
        mixed = (1.0 - weight) * pred_kspace.data + weight * measured.data
        data = np.where(sel, mixed, pred_kspace.data)
    return ComplexVolume(data, Domain.KSPACE_TIME)


def save_mask(m, path):
    header = {
        "T": m.frames,
        "Ky": m.lines,
        "R": int(m.acceleration),
        "kind": m.kind,
        "seed": m.seed,
    }
    write_container(path, MASK_MAGIC, header, m.grid.astype(np.uint8).tobytes(order="C"))


def load_mask(path):
    header, payload = read_container(path, MASK_MAGIC)
    require_keys(header, ("T", "Ky", "R", "kind", "seed"), path)
    try:
        t, ky, R = int(header["T"]), int(header["Ky"]), int(header["R"])
    except (TypeError, ValueError) as exc:
        raise MalformedFile(f"{path}: bad header field ({exc})") from None
    if len(payload) != t * ky:
        raise MalformedFile(f"{path}: payload has {len(payload)} bytes, expected {t * ky}")
    cells = np.frombuffer(payload, dtype=np.uint8)
    if np.any(cells > 1):
        raise MalformedFile(f"{path}: mask cells must be 0 or 1")
    seed = header["seed"]
    return SamplingMask(cells.reshape(t, ky).astype(bool), R, str(header["kind"]),
                        None if seed is None else int(seed))
