"""Profile panels (frame, x-t, x-f and error maps) as graymap files, plus
matplotlib composites and loss curves."""
import os

import numpy as np

from .errors import MalformedFile, ShapeMismatch
from .volume import fftc

# display ceiling of the reduced-dynamic-range x-f panel, as a fraction of its peak
REDUCED_RANGE = 0.1


def write_pgm(path, img):
    """Binary 8-bit portable graymap; ``img`` is clipped to [0, 1]."""
    a = np.clip(np.asarray(img, dtype=np.float64), 0.0, 1.0)
    u8 = np.round(a * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (u8.shape[1], u8.shape[0]))
        fh.write(u8.tobytes())


def read_pgm(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    parts = raw.split(maxsplit=4)
    if len(parts) < 5 or parts[0] != b"P5":
        raise MalformedFile(f"{path}: not a binary graymap")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    body = parts[4]
    if maxval != 255 or len(body) != w * h:
        raise MalformedFile(f"{path}: unexpected graymap payload")
    return np.frombuffer(body, dtype=np.uint8).reshape(h, w)


def profile_panels(recon, truth, column=None):
    """Float panels keyed by name; intensities are not yet display-scaled.

    x-t panels are ``(H, T)``: the image column ``column`` over time. x-f
    panels are the centered temporal DFT magnitude of the same column.
    """
    r = np.asarray(getattr(recon, "data", recon))
    t = np.asarray(getattr(truth, "data", truth))
    if r.shape != t.shape or r.ndim != 3:
        raise ShapeMismatch(f"profile volumes differ: {r.shape} vs {t.shape}")
    T, H, W = t.shape
    col = W // 2 if column is None else int(column)
    if not 0 <= col < W:
        raise ShapeMismatch(f"column {col} outside width {W}")
    mid = T // 2
    out = {}
    for tag, v in (("recon", r), ("truth", t)):
        xt = v[:, :, col].T
        out[f"{tag}_frame"] = np.abs(v[mid])
        out[f"{tag}_xt"] = np.abs(xt)
        out[f"{tag}_xf"] = np.abs(fftc(xt, (1,)))
    xt_r, xt_t = r[:, :, col].T, t[:, :, col].T
    out["error_frame"] = np.abs(r[mid] - t[mid])
    out["error_xt"] = np.abs(xt_r - xt_t)
    out["error_xf"] = np.abs(fftc(xt_r - xt_t, (1,)))
    return out


def _display(panels):
    """Shared intensity scaling: each group uses its truth panel's peak."""
    disp = {}
    for kind in ("frame", "xt", "xf"):
        peak = float(panels[f"truth_{kind}"].max()) or 1.0
        for tag in ("recon", "truth", "error"):
            disp[f"{tag}_{kind}"] = panels[f"{tag}_{kind}"] / peak
    for tag in ("recon", "truth", "error"):
        disp[f"{tag}_xf_reduced"] = disp[f"{tag}_xf"] / REDUCED_RANGE
    return disp


def render_profiles(recon, truth, out_dir, column=None, prefix="", composite=True):
    """Write every panel as ``<prefix><name>.pgm``; returns ``name -> path``.

    With ``composite`` a matplotlib PNG laying the panels out in a grid is
    written too (key ``"composite"``).
    """
    panels = profile_panels(recon, truth, column)
    disp = _display(panels)
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    for name, img in disp.items():
        p = os.path.join(out_dir, f"{prefix}{name}.pgm")
        write_pgm(p, img)
        paths[name] = p
    if composite:
        p = os.path.join(out_dir, f"{prefix}profiles.png")
        _composite(disp, p)
        paths["composite"] = p
    return paths


def _pyplot():
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    return plt


def _composite(disp, path):
    plt = _pyplot()
    cols = ["frame", "xt", "xf", "xf_reduced"]
    rows = ["truth", "recon", "error"]
    fig, axes = plt.subplots(len(rows), len(cols), figsize=(2.6 * len(cols), 2.6 * len(rows)))
    for i, tag in enumerate(rows):
        for j, kind in enumerate(cols):
            ax = axes[i, j]
            ax.imshow(np.clip(disp[f"{tag}_{kind}"], 0, 1), cmap="gray", vmin=0, vmax=1,
                      aspect="auto", interpolation="nearest")
            ax.set_xticks([])
            ax.set_yticks([])
            if i == 0:
                ax.set_title(kind.replace("_", " "), fontsize=9)
            if j == 0:
                ax.set_ylabel(tag, fontsize=9)
    fig.tight_layout()
    # fixed metadata keeps repeated renders byte-identical
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)


def plot_loss(trace, path, title="training loss"):
    plt = _pyplot()
    steps = [s for s, _ in trace]
    losses = [l for _, l in trace]
    fig, ax = plt.subplots(figsize=(5, 3))
    ax.plot(steps, losses, lw=1)
    ax.set_xlabel("step")
    ax.set_ylabel("MAE")
    ax.set_title(title, fontsize=10)
    fig.tight_layout()
    fig.savefig(path, dpi=80, metadata={"Software": None})
    plt.close(fig)


def write_loss_trace(trace, path):
    with open(path, "w") as fh:
        fh.write("step\tloss\n")
        for s, l in trace:
            fh.write(f"{int(s)}\t{float(l):.17g}\n")


def read_loss_trace(path):
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "step\tloss":
        raise MalformedFile(f"{path}: missing loss trace header")
    out = []
    for ln in lines[1:]:
        s, l = ln.split("\t")
        out.append((int(s), float(l)))
    return out


def metrics_table(reports):
    """Tab-separated mean/std table; ``reports`` maps a label to a MetricsReport."""
    names = ("nmse", "psnr", "ssim", "heart_psnr")
    head = ["method"] + [f"{n}_{s}" for n in names for s in ("mean", "std")]
    lines = ["\t".join(head)]
    for label, rep in reports.items():
        agg = rep.aggregate()
        row = [label]
        for n in names:
            if n in agg:
                row += [f"{agg[n]['mean']:.6f}", f"{agg[n]['std']:.6f}"]
            else:
                row += ["nan", "nan"]
        lines.append("\t".join(row))
    return "\n".join(lines) + "\n"
