"""Synthetic datasets, the MAE/Adam training loop, checkpoints and the
representation x data-consistency ablation."""
import hashlib
import logging
import os
from dataclasses import asdict, dataclass, field, fields, replace
from typing import List, Optional, Tuple

import numpy as np

from . import dcra
from .errors import DivergedLoss, InvalidSpec
from .metrics import MetricsReport, evaluate_volume
from .nn.layers import ParamStore
from .nn.tensor import tabs
from .phantom import PhantomSpec, generate_phantom
from .sampling import (SamplingMask, apply_data_consistency, lattice_mask, undersample,
                       vd_random_mask)
from .volume import fftc

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    epochs: int = 10
    batch_size: int = 1
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    mask_policy: str = "FIXED"
    n_masks: int = 100
    acceleration: int = 8
    mask_kind: str = "lattice"
    density: float = 0.7
    envelope_frac: float = 0.2

    def __post_init__(self):
        if self.learning_rate < 0:
            raise InvalidSpec("learning_rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidSpec("epochs and batch_size must be at least 1")
        if self.mask_policy not in ("FIXED", "POOL"):
            raise InvalidSpec(f"unknown mask policy {self.mask_policy!r}")
        if self.mask_policy == "POOL" and self.n_masks < 1:
            raise InvalidSpec("POOL mask policy needs n_masks >= 1")
        if self.mask_kind not in ("lattice", "vdrandom"):
            raise InvalidSpec(f"unknown mask kind {self.mask_kind!r}")


@dataclass(frozen=True)
class DatasetSpec:
    n_train: int = 20
    n_test: int = 5
    T: int = 16
    H: int = 32
    W: int = 32
    frame_interval: float = 72.0
    heart_rate: Tuple[float, float] = (120.0, 160.0)
    heart_radius: Tuple[float, float] = (3.5, 5.0)
    beat_amplitude: Tuple[float, float] = (0.2, 0.3)
    center_jitter: float = 2.0
    background_drift: Tuple[float, float] = (0.0, 0.0)
    noise_sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test < 1:
            raise InvalidSpec("dataset needs at least one volume")


@dataclass
class Sample:
    truth: object
    measured: object
    mask: SamplingMask
    heart_region: np.ndarray
    phantom: PhantomSpec = field(repr=False)

    @property
    def request(self):
        return dcra.ReconRequest(self.measured, self.mask)


@dataclass
class Dataset:
    train: List[Sample]
    test: List[Sample]
    mask_pool: List[SamplingMask]

    def digest(self):
        h = hashlib.sha256()
        for s in self.train + self.test:
            for arr in (s.truth.data, s.measured.data, s.mask.grid, s.heart_region):
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _split_seeds(seed, n_train, n_test):
    ss = np.random.SeedSequence([seed, 0x6B74])
    children = ss.spawn(n_train + n_test)
    return children[:n_train], children[n_train:]


def sample_phantom_spec(spec, seq):
    rng = np.random.default_rng(seq)
    u = lambda lo_hi: float(rng.uniform(*lo_hi))
    ch = 0.5 * (spec.H - 1) + rng.uniform(-spec.center_jitter, spec.center_jitter)
    cw = 0.5 * (spec.W - 1) + rng.uniform(-spec.center_jitter, spec.center_jitter)
    return PhantomSpec(
        T=spec.T, H=spec.H, W=spec.W, frame_interval=spec.frame_interval,
        heart_rate=u(spec.heart_rate), heart_radius=u(spec.heart_radius),
        beat_amplitude=u(spec.beat_amplitude), heart_center=(float(ch), float(cw)),
        background_drift=u(spec.background_drift), noise_sigma=spec.noise_sigma,
        phase_texture=True, seed=int(rng.integers(2 ** 31)))


def make_mask(tc, T, Ky, seed):
    if tc.mask_kind == "lattice":
        return lattice_mask(T, Ky, tc.acceleration, shear=1, offset=int(seed) % tc.acceleration)
    return vd_random_mask(T, Ky, tc.acceleration, tc.density, tc.envelope_frac, seed=int(seed))


def build_mask_pool(tc, T, Ky):
    n = tc.n_masks if tc.mask_policy == "POOL" else 1
    return [make_mask(tc, T, Ky, tc.seed * 1000 + i) for i in range(n)]


def draw_training_masks(pool, n, seed):
    rng = np.random.default_rng([seed, 0x706F6F6C])
    return [pool[i] for i in rng.integers(0, len(pool), size=n)]


def _make_sample(pspec, m):
    ph = generate_phantom(pspec)
    return Sample(ph.truth, undersample(ph.truth, m), m, ph.heart_region, pspec)


def build_dataset(spec, tc):
    """Phantom train/test splits, retrospectively undersampled.

    Test volumes share one fixed mask; training volumes use that mask under
    the FIXED policy and a per-sequence draw from the pool otherwise.
    """
    train_seeds, test_seeds = _split_seeds(spec.seed, spec.n_train, spec.n_test)
    pool = build_mask_pool(tc, spec.T, spec.W)
    test_mask = pool[0]
    if tc.mask_policy == "POOL":
        train_masks = draw_training_masks(pool, spec.n_train, tc.seed)
    else:
        train_masks = [test_mask] * spec.n_train
    train_specs = [sample_phantom_spec(spec, s) for s in train_seeds]
    test_specs = [sample_phantom_spec(spec, s) for s in test_seeds]
    if set(train_specs) & set(test_specs):
        raise InvalidSpec("a phantom parameter tuple appears in both splits")
    train = [_make_sample(p, m) for p, m in zip(train_specs, train_masks)]
    test = [_make_sample(p, test_mask) for p in test_specs]
    return Dataset(train, test, pool)


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros(p.shape) for p in params]
        self.v = [np.zeros(p.shape) for p in params]
        self.step_count = 0

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            p.data = p.data - self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def mae_loss(out, truth):
    return tabs(out - dcra.to_channels(truth.data)).mean()


@dataclass
class TrainResult:
    params: ParamStore
    loss_trace: List[Tuple[int, float]]
    net: object = field(repr=False)
    epochs_done: int = 0


def _checkpoint(net, opt, epoch, trace, tc, cfg):
    store = ParamStore.from_module(net, {
        "config": cfg.to_dict(), "train": asdict(tc), "epoch": epoch,
        "adam_step": opt.step_count, "loss_trace": trace})
    for (name, _), m, v in zip(net.named_parameters(), opt.m, opt.v):
        store.arrays["adam.m." + name] = m.copy()
        store.arrays["adam.v." + name] = v.copy()
    return store


def train(cfg, train_set, tc, checkpoint_dir=None, resume=None, stop_after=None, progress=None):
    """Adam on the image-domain MAE. Returns parameters and the loss trace.

    ``resume`` is a checkpoint :class:`ParamStore` written by this function;
    training continues from its epoch. ``stop_after`` ends after that many
    epochs in total (used to split a run across processes).
    """
    if not train_set:
        raise InvalidSpec("training set is empty")
    net = dcra.DcraNet(cfg)
    named = list(net.named_parameters())
    opt = Adam([p for _, p in named], tc.learning_rate, tc.beta1, tc.beta2, tc.adam_eps)
    trace, start = [], 0
    if resume is not None:
        resume.load_into(net)
        for i, (name, _) in enumerate(named):
            opt.m[i] = resume["adam.m." + name].copy()
            opt.v[i] = resume["adam.v." + name].copy()
        opt.step_count = int(resume.meta["adam_step"])
        start = int(resume.meta["epoch"])
        trace = [tuple(x) for x in resume.meta["loss_trace"]]
    end = tc.epochs if stop_after is None else min(tc.epochs, stop_after)
    step = len(trace)
    for epoch in range(start, end):
        order = np.random.default_rng([tc.seed, epoch]).permutation(len(train_set))
        for b in range(0, len(order), tc.batch_size):
            batch = [train_set[i] for i in order[b:b + tc.batch_size]]
            net.zero_grad()
            total = 0.0
            for s in batch:
                loss = mae_loss(net.forward(s.request), s.truth) * (1.0 / len(batch))
                loss.backward()
                total += loss.item()
            if not np.isfinite(total):
                raise DivergedLoss(f"loss became {total} at step {step} (epoch {epoch})")
            opt.step()
            trace.append((step, total))
            step += 1
            if progress is not None:
                progress(epoch, step, total)
        if checkpoint_dir is not None:
            os.makedirs(checkpoint_dir, exist_ok=True)
            _checkpoint(net, opt, epoch + 1, trace, tc, cfg).save(
                os.path.join(checkpoint_dir, f"epoch{epoch + 1:03d}.ktp"))
        log.info("epoch %d done, last loss %.6f", epoch + 1, trace[-1][1])
    final = _checkpoint(net, opt, end, trace, tc, cfg)
    return TrainResult(final, trace, net, end)


def evaluate_model(net, samples, **metadata):
    report = MetricsReport(metadata=dict(metadata))
    for s in samples:
        report.add(evaluate_volume(net.reconstruct(s.request), s.truth, s.heart_region))
    return report


def evaluate_baseline(fn, samples, **metadata):
    report = MetricsReport(metadata=dict(metadata))
    for s in samples:
        report.add(evaluate_volume(fn(s), s.truth, s.heart_region))
    return report


ABLATION_ARMS = (
    (dcra.TIME, dcra.DISABLED),
    (dcra.TIME, dcra.ENABLED),
    (dcra.FREQUENCY, dcra.DISABLED),
    (dcra.FREQUENCY, dcra.ENABLED),
)


@dataclass
class AblationRow:
    representation: str
    data_consistency: str
    report: MetricsReport
    dataset_digest: str
    max_dc_violation: Optional[float]
    loss_trace: List[Tuple[int, float]] = field(repr=False, default_factory=list)


def dc_violation(recon, sample):
    """Largest deviation from the measurements at sampled k-space entries."""
    k = fftc(recon.data, (-2, -1))
    sel = np.broadcast_to(sample.mask.grid[:, None, :], k.shape)
    return float(np.max(np.abs(k[sel] - sample.measured.data[sel])))


def run_ablation(dataset, base_cfg, tc, progress=None):
    """Train and evaluate the 2 x 2 grid {TIME, FREQUENCY} x {DC off, DC on}."""
    rows = []
    for rep, dc in ABLATION_ARMS:
        cfg = replace(base_cfg, temporal_representation=rep, data_consistency=dc)
        digest = dataset.digest()
        res = train(cfg, dataset.train, tc, progress=progress)
        report = MetricsReport(metadata={"representation": rep, "data_consistency": dc,
                                         "mask_kind": tc.mask_kind, "acceleration": tc.acceleration,
                                         "seed": tc.seed})
        worst = 0.0
        for s in dataset.test:
            recon = res.net.reconstruct(s.request)
            report.add(evaluate_volume(recon, s.truth, s.heart_region))
            worst = max(worst, dc_violation(recon, s))
        rows.append(AblationRow(rep, dc, report, digest,
                                worst if dc == dcra.ENABLED else None, res.loss_trace))
    return rows


def ablation_table(rows):
    """Tab-separated table with one row per arm, mean and std per metric."""
    cols = ["representation", "dc", "nmse_mean", "nmse_std", "psnr_mean", "psnr_std",
            "ssim_mean", "ssim_std", "heart_psnr_mean", "heart_psnr_std"]
    lines = ["\t".join(cols)]
    for r in rows:
        agg = r.report.aggregate()
        vals = [r.representation, r.data_consistency]
        for name in ("nmse", "psnr", "ssim", "heart_psnr"):
            vals += [f"{agg[name]['mean']:.6f}", f"{agg[name]['std']:.6f}"]
        lines.append("\t".join(vals))
    return "\n".join(lines) + "\n"


def config_from_dict(d):
    """Split an experiment mapping into (DatasetSpec, DcraNetConfig, TrainConfig)."""
    unknown = set(d) - {"dataset", "model", "train"}
    if unknown:
        raise InvalidSpec(f"unknown experiment sections: {', '.join(sorted(unknown))}")
    ds = dict(d.get("dataset", {}))
    for key in ("heart_rate", "heart_radius", "beat_amplitude", "background_drift"):
        if key in ds:
            ds[key] = tuple(ds[key])
    _reject_unknown(DatasetSpec, ds, "dataset")
    tr = dict(d.get("train", {}))
    _reject_unknown(TrainConfig, tr, "train")
    return DatasetSpec(**ds), dcra.DcraNetConfig.from_dict(dict(d.get("model", {}))), TrainConfig(**tr)


def _reject_unknown(cls, d, section):
    extra = set(d) - {f.name for f in fields(cls)}
    if extra:
        raise InvalidSpec(f"unknown {section} keys: {', '.join(sorted(extra))}")


__all__ = ["TrainConfig", "DatasetSpec", "build_dataset", "train", "run_ablation",
           "apply_data_consistency"]
