"""Classical k-t reconstructions: zero-fill, temporal average, sliding window
and low-rank plus sparse (L+S) decomposition."""
import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import InvalidSpec, ShapeMismatch, SvdFailure
from .volume import ComplexVolume, Domain, fftc, ifftc, spatial_ifft2c

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class LpsParams:
    lambda_L: float = 0.277
    lambda_S: float = 0.039
    max_iters: int = 100
    rel_tol: float = 1e-5

    def __post_init__(self):
        if self.lambda_L <= 0 or self.lambda_S <= 0:
            raise InvalidSpec("lambda_L and lambda_S must be positive")
        if self.max_iters < 1:
            raise InvalidSpec("max_iters must be at least 1")


FETAL_LPS = LpsParams(0.277, 0.039)
ADULT_LPS = LpsParams(0.204, 0.057)


def _check(measured, m):
    if measured.domain != Domain.KSPACE_TIME:
        raise ShapeMismatch("measured data must be a k-space volume")
    if measured.frames != m.frames or measured.width != m.lines:
        raise ShapeMismatch(
            f"mask {m.grid.shape} does not match measured (T={measured.frames}, Ky={measured.width})")


def recon_zero_fill(measured):
    return spatial_ifft2c(measured)


def recon_average(measured, m):
    _check(measured, m)
    sel = m.grid[:, None, :]
    counts = m.grid.sum(axis=0)
    total = np.where(sel, measured.data, 0.0).sum(axis=0)
    static = np.where(counts > 0, total / np.maximum(counts, 1), 0.0)
    k = np.broadcast_to(static, measured.shape).copy()
    return spatial_ifft2c(ComplexVolume(k, Domain.KSPACE_TIME))


def nearest_sampled_frames(m):
    """For each ``(t, ky)`` the temporally nearest frame sampling ``ky``.

    Ties go to the earlier frame; ``-1`` marks lines that are never sampled.
    """
    T, Ky = m.grid.shape
    src = np.full((T, Ky), -1, dtype=np.int64)
    t = np.arange(T)
    for ky in range(Ky):
        frames = np.flatnonzero(m.grid[:, ky])
        if frames.size == 0:
            continue
        dist = np.abs(t[:, None] - frames[None, :])
        # argmin returns the first minimum, i.e. the earliest frame on ties
        src[:, ky] = frames[np.argmin(dist, axis=1)]
    return src


def recon_sliding_window(measured, m):
    _check(measured, m)
    src = nearest_sampled_frames(m)
    k = np.zeros_like(measured.data)
    for ky in range(m.lines):
        rows = src[:, ky]
        if rows[0] < 0:
            continue
        k[:, :, ky] = measured.data[rows, :, ky]
    return spatial_ifft2c(ComplexVolume(k, Domain.KSPACE_TIME))


def soft_threshold(x, tau):
    """Complex soft thresholding ``x * max(|x| - tau, 0) / |x|`` (0 at x = 0)."""
    if np.any(np.asarray(tau) < 0):
        raise ValueError("threshold must be non-negative")
    x = np.asarray(x)
    mag = np.abs(x)
    shrink = np.maximum(mag - tau, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(mag > 0, x * (shrink / np.where(mag > 0, mag, 1.0)), 0.0)
    return out if out.ndim else out[()]


def svt(M, tau):
    """Singular value thresholding: ``U diag(soft(s, tau)) V^H``."""
    if tau < 0:
        raise ValueError("threshold must be non-negative")
    try:
        U, s, Vh = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise SvdFailure(str(exc)) from None
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vh[keep]


@dataclass
class LpsResult:
    image: ComplexVolume
    low_rank: ComplexVolume
    sparse: ComplexVolume
    iterations: int
    residuals: List[float] = field(default_factory=list)

    def residual_non_increasing(self, window=10, rtol=1e-9):
        tail = np.asarray(self.residuals[-(window + 1):])
        return bool(np.all(np.diff(tail) <= rtol * np.maximum(tail[:-1], 1e-300)))


def recon_lps(measured, m, p=FETAL_LPS, full_output=False):
    """L+S reconstruction on the T x (H*W) Casorati matrix.

    Thresholds are relative: ``lambda_L`` scales the largest singular value
    of the initial Casorati matrix and ``lambda_S`` the peak magnitude of its
    temporal spectrum. The sparsifying transform is the temporal DFT. The
    returned image is the last L + S after its data-consistency step.
    """
    _check(measured, m)
    T, H, W = measured.shape
    sel = np.broadcast_to(m.grid[:, None, :], measured.shape)
    d = measured.data

    def EH(k):
        return ifftc(k, (-2, -1)).reshape(T, H * W)

    def E(x):
        k = fftc(x.reshape(T, H, W), (-2, -1))
        return np.where(sel, k, 0.0)

    M0 = EH(d)
    try:
        sigma1 = np.linalg.svd(M0, compute_uv=False)[0]
    except np.linalg.LinAlgError as exc:
        raise SvdFailure(str(exc)) from None
    tau_L = p.lambda_L * sigma1
    tau_S = p.lambda_S * np.max(np.abs(fftc(M0, (0,))))

    M = M0
    S = np.zeros_like(M0)
    residuals = []
    it = 0
    for it in range(1, p.max_iters + 1):
        M_old = M
        L = svt(M - S, tau_L)
        S = ifftc(soft_threshold(fftc(M - L, (0,)), tau_S), (0,))
        resk = E(L + S) - np.where(sel, d, 0.0)
        residuals.append(float(np.linalg.norm(resk)))
        M = L + S - EH(resk)
        if np.linalg.norm(M - M_old) < p.rel_tol * np.linalg.norm(M_old):
            break
    # M is L + S with the sampled k-space entries replaced by the measurements
    img = ComplexVolume(M.reshape(T, H, W), Domain.IMAGE_TIME)
    res = LpsResult(img, ComplexVolume(L.reshape(T, H, W)), ComplexVolume(S.reshape(T, H, W)),
                    it, residuals)
    if not res.residual_non_increasing(10):
        log.warning("L+S residual increased during the final iterations")
    return res if full_output else img
