"""``ktrecon`` command line: phantom, mask, recon, train, eval, ablate, profiles.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
Each run writes ``<output>.manifest.json`` recording the full argument set,
derived configuration and library versions.
"""
import argparse
import json
import logging
import os
import platform
import sys

import numpy as np

from . import __version__, baselines, dcra, report, trainer
from .errors import DataError, InvalidSpec, MalformedFile, NumericalError
from .metrics import evaluate
from .nn.layers import ParamStore
from .phantom import PRESETS, generate_phantom, preset
from .sampling import (SamplingMask, full_mask, lattice_mask, load_mask, save_mask, undersample,
                       vd_random_mask)
from .volume import Domain, load_volume, save_volume

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 1, 2, 3

log = logging.getLogger("ktrecon")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _versions():
    return {"ktrecon": __version__, "numpy": np.__version__,
            "python": platform.python_version()}


def manifest_path(output):
    return os.fspath(output).rstrip("/\\") + ".manifest.json"


def write_manifest(output, command, args, extra=None, status="ok", error=None):
    data = {"command": command, "arguments": args, "versions": _versions(),
            "threads": _thread_count(), "status": status}
    if extra:
        data.update(extra)
    if error is not None:
        data["error"] = error
    parent = os.path.dirname(os.path.abspath(output))
    os.makedirs(parent, exist_ok=True)
    with open(manifest_path(output), "w") as fh:
        json.dump(data, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


def _thread_count():
    raw = os.environ.get("KTRECON_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise InvalidSpec(f"KTRECON_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise InvalidSpec("KTRECON_THREADS must be at least 1")
    return n


# region files reuse the mask container with the H x W grid as payload

def save_region(region, path):
    save_mask(SamplingMask(np.asarray(region, dtype=bool), 1, "region"), path)


def load_region(path):
    m = load_mask(path)
    if m.kind != "region":
        raise MalformedFile(f"{path}: holds a {m.kind!r} mask, not a region")
    return m.grid


# subcommands ---------------------------------------------------------------

def cmd_phantom(a):
    overrides = {"seed": a.seed}
    if a.frames is not None:
        overrides["T"] = a.frames
    if a.size is not None:
        overrides["H"], overrides["W"] = a.size
    for flag, key in (("bpm", "heart_rate"), ("interval", "frame_interval"),
                      ("radius", "heart_radius"), ("amplitude", "beat_amplitude"),
                      ("drift", "background_drift"), ("noise", "noise_sigma")):
        val = getattr(a, flag)
        if val is not None:
            overrides[key] = val
    if a.no_phase:
        overrides["phase_texture"] = False
    spec = preset(a.preset, **overrides)
    ph = generate_phantom(spec)
    save_volume(ph.truth, a.output)
    if a.region_out:
        save_region(ph.heart_region, a.region_out)
    return {"phantom_spec": spec.__dict__}


def cmd_mask(a):
    if a.kind == "lattice":
        m = lattice_mask(a.frames, a.lines, a.accel, shear=a.shear, offset=a.offset)
    elif a.kind == "vdrandom":
        m = vd_random_mask(a.frames, a.lines, a.accel, a.density, a.envelope, seed=a.seed)
    else:
        m = full_mask(a.frames, a.lines)
    save_mask(m, a.output)
    return {"lines_sampled": int(m.grid.sum())}


def _measured(a, m):
    v = load_volume(a.input)
    if v.domain == Domain.KSPACE_TIME:
        return v
    if v.domain != Domain.IMAGE_TIME:
        raise DataError(f"{a.input}: recon input must be k-space or an image sequence")
    return undersample(v, m)


def cmd_recon(a):
    m = load_mask(a.mask)
    meas = _measured(a, m)
    extra = {}
    if a.method == "zerofill":
        out = baselines.recon_zero_fill(meas)
    elif a.method == "average":
        out = baselines.recon_average(meas, m)
    elif a.method == "sliding":
        out = baselines.recon_sliding_window(meas, m)
    elif a.method == "lps":
        p = baselines.LpsParams(a.lambda_l, a.lambda_s, a.iters)
        res = baselines.recon_lps(meas, m, p, full_output=True)
        out = res.image
        extra = {"lps": p.__dict__, "iterations": res.iterations}
    else:
        if not a.model:
            raise UsageError("recon --method dcra requires --model")
        store = ParamStore.load(a.model)
        if a.config:
            cfg = dcra.DcraNetConfig.load(a.config)
        elif "config" in store.meta:
            cfg = dcra.DcraNetConfig.from_dict(store.meta["config"])
        else:
            raise UsageError("checkpoint carries no network config; pass --config")
        out = dcra.forward(dcra.ReconRequest(meas, m), cfg, store)
        extra = {"network": cfg.to_dict()}
    save_volume(out, a.output)
    return extra


def cmd_eval(a):
    r, t = load_volume(a.recon), load_volume(a.truth)
    region = load_region(a.region) if a.region else None
    rep = evaluate(r, t, region, recon_file=os.path.basename(a.recon),
                   truth_file=os.path.basename(a.truth))
    rep.save(a.output)
    print(report.metrics_table({os.path.basename(a.recon): rep}), end="")
    return {}


def cmd_profiles(a):
    r, t = load_volume(a.recon), load_volume(a.truth)
    column = a.column
    if column is None and a.region:
        region = load_region(a.region)
        if region.any():
            column = int(round(np.nonzero(region)[1].mean()))
    paths = report.render_profiles(r, t, a.output, column=column, prefix=a.prefix)
    return {"column": column, "panels": sorted(os.path.basename(p) for p in paths.values())}


def _load_experiment(path):
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InvalidSpec(f"{path}: invalid experiment config ({exc})") from None
    if not isinstance(d, dict):
        raise InvalidSpec(f"{path}: experiment config must be a mapping")
    return trainer.config_from_dict(d)


def _progress(epoch, step, loss):
    log.info("epoch %d step %d loss %.6f", epoch + 1, step, loss)


def _baseline_reports(test):
    return {
        "zerofill": trainer.evaluate_baseline(lambda s: baselines.recon_zero_fill(s.measured), test),
        "sliding": trainer.evaluate_baseline(
            lambda s: baselines.recon_sliding_window(s.measured, s.mask), test),
    }


def cmd_train(a):
    ds, cfg, tc = _load_experiment(a.config)
    data = trainer.build_dataset(ds, tc)
    os.makedirs(a.output, exist_ok=True)
    resume = ParamStore.load(a.resume) if a.resume else None
    res = trainer.train(cfg, data.train, tc, checkpoint_dir=os.path.join(a.output, "checkpoints"),
                        resume=resume, progress=_progress)
    res.params.save(os.path.join(a.output, "final.ktp"))
    cfg.save(os.path.join(a.output, "net.json"))
    report.write_loss_trace(res.loss_trace, os.path.join(a.output, "loss.tsv"))
    report.plot_loss(res.loss_trace, os.path.join(a.output, "loss.png"))
    reports = _baseline_reports(data.test)
    reports["dcra"] = trainer.evaluate_model(res.net, data.test, method="dcra")
    for name, rep in reports.items():
        rep.save(os.path.join(a.output, f"report_{name}.json"))
    table = report.metrics_table(reports)
    with open(os.path.join(a.output, "metrics.tsv"), "w") as fh:
        fh.write(table)
    if data.test:
        s = data.test[0]
        column = int(round(np.nonzero(s.heart_region)[1].mean())) if s.heart_region.any() else None
        report.render_profiles(res.net.reconstruct(s.request), s.truth,
                               os.path.join(a.output, "profiles"), column=column)
    print("=== metrics ===")
    print(table, end="")
    return {"dataset": ds.__dict__, "network": cfg.to_dict(), "train": tc.__dict__,
            "dataset_digest": data.digest(), "parameters": res.params.count() - _adam_entries(res.params)}


def _adam_entries(store):
    return sum(a.size for n, a in store.arrays.items() if n.startswith("adam."))


def cmd_ablate(a):
    ds, cfg, tc = _load_experiment(a.config)
    data = trainer.build_dataset(ds, tc)
    os.makedirs(a.output, exist_ok=True)
    rows = trainer.run_ablation(data, cfg, tc, progress=_progress)
    table = trainer.ablation_table(rows)
    with open(os.path.join(a.output, "ablation.tsv"), "w") as fh:
        fh.write(table)
    for r in rows:
        tag = f"{r.representation.lower()}_dc{'on' if r.data_consistency == dcra.ENABLED else 'off'}"
        r.report.save(os.path.join(a.output, f"report_{tag}.json"))
        report.write_loss_trace(r.loss_trace, os.path.join(a.output, f"loss_{tag}.tsv"))
    print("=== ablation ===")
    print(table, end="")
    return {"dataset": ds.__dict__, "network": cfg.to_dict(), "train": tc.__dict__,
            "dataset_digests": [r.dataset_digest for r in rows],
            "dc_violations": [r.max_dc_violation for r in rows]}


# parser ---------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="ktrecon", description="Dynamic MRI k-t reconstruction toolkit.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("phantom", help="synthesise a beating-heart phantom")
    s.add_argument("--preset", choices=sorted(PRESETS), default="fetal")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--frames", type=int)
    s.add_argument("--size", type=int, nargs=2, metavar=("H", "W"))
    s.add_argument("--bpm", type=float)
    s.add_argument("--interval", type=float, help="frame interval in ms")
    s.add_argument("--radius", type=float)
    s.add_argument("--amplitude", type=float)
    s.add_argument("--drift", type=float)
    s.add_argument("--noise", type=float)
    s.add_argument("--no-phase", action="store_true")
    s.add_argument("--region-out")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_phantom)

    s = sub.add_parser("mask", help="generate a k-t sampling mask")
    s.add_argument("--kind", choices=("lattice", "vdrandom", "full"), required=True)
    s.add_argument("--accel", type=int, default=8)
    s.add_argument("--frames", type=int, required=True)
    s.add_argument("--lines", type=int, required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--shear", type=int, default=1)
    s.add_argument("--offset", type=int, default=0)
    s.add_argument("--density", type=float, default=0.7)
    s.add_argument("--envelope", type=float, default=0.2)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_mask)

    s = sub.add_parser("recon", help="reconstruct undersampled data")
    s.add_argument("--method", choices=("zerofill", "average", "sliding", "lps", "dcra"), required=True)
    s.add_argument("--mask", required=True)
    s.add_argument("--input", required=True,
                   help="k-space volume, or an image sequence to undersample with --mask")
    s.add_argument("--lambda-l", type=float, default=baselines.FETAL_LPS.lambda_L)
    s.add_argument("--lambda-s", type=float, default=baselines.FETAL_LPS.lambda_S)
    s.add_argument("--iters", type=int, default=baselines.FETAL_LPS.max_iters)
    s.add_argument("--model")
    s.add_argument("--config")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_recon)

    s = sub.add_parser("train", help="train the attention network on synthetic data")
    s.add_argument("--config", required=True)
    s.add_argument("--resume")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="score a reconstruction against ground truth")
    s.add_argument("--recon", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--region")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("ablate", help="representation x data-consistency ablation")
    s.add_argument("--config", required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("profiles", help="emit frame, x-t and x-f panels")
    s.add_argument("--recon", required=True)
    s.add_argument("--truth", required=True)
    s.add_argument("--region")
    s.add_argument("--column", type=int)
    s.add_argument("--prefix", default="")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_profiles)
    return p


def _arg_record(a):
    return {k: v for k, v in sorted(vars(a).items()) if k not in ("func", "verbose")}


def dispatch(argv):
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if not exc.code else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args = _arg_record(a)
    try:
        from threadpoolctl import threadpool_limits
        with threadpool_limits(limits=_thread_count()):
            extra = a.func(a)
    except UsageError as exc:
        print(f"ktrecon {a.command}: {exc}", file=sys.stderr)
        write_manifest(a.output, a.command, args, status="usage_error", error=str(exc))
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"ktrecon {a.command}: data error: {exc}", file=sys.stderr)
        write_manifest(a.output, a.command, args, status="data_error", error=str(exc))
        return EXIT_DATA
    except NumericalError as exc:
        print(f"ktrecon {a.command}: numerical failure: {exc}", file=sys.stderr)
        write_manifest(a.output, a.command, args, status="numerical_error", error=str(exc))
        return EXIT_NUMERICAL
    write_manifest(a.output, a.command, args, extra)
    return EXIT_OK


def main(argv=None):
    sys.exit(dispatch(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
