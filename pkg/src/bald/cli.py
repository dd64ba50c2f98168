"""Command-line interface.

Subcommands: ``simulate``, ``denoise``, ``fit``, ``aptw``, ``eval`` and
``import-nifti``. Every output container carries a provenance block with the
full flag set. Exit codes: 0 success, 2 invalid arguments or configuration,
3 file I/O, 4 noise estimation failure, 5 bad data, 6 internal contract
violation.
"""

from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import aptw_map, contrast_maps, pools_by_name
from .container import read_container, read_sequence, write_container, write_maps, write_sequence
from .core import SpectralSequence, normalize_by_m0, rois_from_label_map
from .errors import ConfigurationError, ContractError, DataError, EstimationError
from .evaluation import psnr, roi_stats, roi_values, welch_t_test
from .noise import NoiseCurve
from .phantom import (
    NOISE_MODELS,
    PhantomSpec,
    add_model_noise,
    add_rician_noise,
    compartment_labels,
    generate_phantom,
    load_phantom_spec,
)
from .pipeline import BaldParams, bald

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_IO = 3
EXIT_ESTIMATION = 4
EXIT_DATA = 5
EXIT_INTERNAL = 6

log = logging.getLogger("bald")


def _provenance(args, **extra) -> dict:
    flags = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    flags = {k: (str(v) if isinstance(v, Path) else v) for k, v in flags.items()}
    prov = {"tool": "bald", "version": __version__, "command": args.command, "flags": flags}
    prov.update(extra)
    return prov


def _load_rois(path) -> list:
    """ROIs from a label-map container (one channel; 0 = background)."""
    c = read_container(path)
    if c.data.shape[0] != 1:
        raise ConfigurationError(f"{path}: label map must have exactly one channel")
    labels = np.rint(c.data[0]).astype(np.int64)
    names = {int(k): v for k, v in c.metadata.get("roi_names", {}).items()}
    return rois_from_label_map(labels, names)


def _write_roi_csv(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["roi", "n", "mean", "std", "q1", "q2", "q3"])
        for r in rows:
            w.writerow([r[0], r[1]] + [repr(float(v)) for v in r[2:]])


def _write_metrics_csv(path, metrics):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "value"])
        for k, v in metrics:
            w.writerow([k, repr(float(v))])


def _roi_rows(maps: dict, rois: list, prefix: bool) -> list:
    rows = []
    for name, image in maps.items():
        for roi in rois:
            st = roi_stats(image, roi)
            label = f"{name}:{st.label}" if prefix else st.label
            rows.append([label] + st.row()[1:])
    return rows


# ------------------------------------------------------------------ commands


def cmd_simulate(args) -> int:
    spec = load_phantom_spec(args.spec) if args.spec else PhantomSpec()
    clean = generate_phantom(spec)
    if args.noise == "rician":
        noisy = add_rician_noise(clean, args.level, args.seed)
    elif args.noise == "model":
        noisy = add_model_noise(clean, args.curve, args.seed)
    else:
        noisy = clean
    prov = _provenance(args, seed=args.seed)
    write_sequence(args.out, noisy, provenance=prov)
    if args.clean_out:
        write_sequence(args.clean_out, clean, provenance=prov)
    if args.labels_out:
        lab = compartment_labels(spec)
        names = {i * spec.grid + j + 1: f"row{i}_col{j}" for i in range(spec.grid) for j in range(spec.grid)}
        write_container(args.labels_out, lab[None].astype(np.float64), channels=["labels"],
                        metadata={"roi_names": names}, provenance=prov)
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_denoise(args) -> int:
    params = BaldParams(args.t1, args.t2, args.patch, args.stride, args.workers)
    seq = read_sequence(args.input)
    if args.normalize:
        seq = normalize_by_m0(seq)
    curve = NoiseCurve.from_csv(args.curve_in) if args.curve_in else None
    out, curve = bald(seq, params, curve=curve, backend=args.backend)
    extra = {"params": params.to_dict(), "sigma_target": curve.mean_sigma}
    if args.curve_out:
        Path(args.curve_out).write_text(curve.to_csv())
        extra["noise_curve"] = str(args.curve_out)
    write_sequence(args.out, out, provenance=_provenance(args, **extra))
    log.info("sigma_target %.6g; wrote %s", curve.mean_sigma, args.out)
    return EXIT_OK


def cmd_fit(args) -> int:
    names = [p.strip() for p in args.pools.split(",") if p.strip()]
    pools = pools_by_name(names)
    seq = read_sequence(args.input)
    cm = contrast_maps(seq, pools, max_iter=args.max_iter, workers=args.workers, backend=args.backend)
    maps = dict(cm.amplitudes)
    maps["converged"] = cm.converged.astype(np.float64)
    maps["residual_norm"] = cm.residual_norm
    n_fail = int(cm.failed.sum())
    if n_fail:
        log.warning("%d pixel fit(s) hit the iteration cap", n_fail)
    write_maps(args.out, maps, mask=seq.mask, metadata={"fit": cm.metadata, "failed": n_fail},
               provenance=_provenance(args))
    if args.rois:
        rois = _load_rois(args.rois)
        rows = _roi_rows({p.name: cm.amplitudes[p.name] for p in pools}, rois, prefix=True)
        if args.roi_out:
            _write_roi_csv(args.roi_out, rows)
        _print_roi_table(rows)
    return EXIT_OK


def cmd_aptw(args) -> int:
    seq = read_sequence(args.input)
    m = aptw_map(seq, args.dw)
    write_maps(args.out, {"APTw": m.filled(0.0)}, mask=seq.mask,
               metadata={"unit": "percent", "dw": args.dw}, provenance=_provenance(args))
    return EXIT_OK


def _print_roi_table(rows):
    print(f"{'roi':<24}{'n':>6}{'mean':>12}{'std':>12}{'q1':>12}{'q2':>12}{'q3':>12}")
    for r in rows:
        print(f"{r[0]:<24}{r[1]:>6}" + "".join(f"{v:>12.5g}" for v in r[2:]))


def cmd_eval(args) -> int:
    ref, test = read_container(args.ref), read_container(args.test)
    if ref.data.shape != test.data.shape:
        raise ConfigurationError(f"shape mismatch {ref.data.shape} vs {test.data.shape}")
    mask = ref.mask
    metrics = [("psnr", psnr(ref.data, test.data, peak=args.peak, mask=mask))]
    diff = ref.data - test.data
    if mask is not None:
        diff = diff[:, mask]
    metrics.append(("mse", float(np.mean(diff ** 2))))
    rows = []
    if args.rois:
        if ref.channels is None:
            raise ConfigurationError("ROI statistics need map containers (fit or aptw output)")
        rois = _load_rois(args.rois)
        chans = [args.channel] if args.channel else [c for c in ref.channels if c not in ("converged", "residual_norm")]
        maps = {c: test.channel(c) for c in chans}
        rows = _roi_rows(maps, rois, prefix=len(chans) > 1)
        for c in chans:
            for roi in rois:
                a, b = roi_values(ref.channel(c), roi), roi_values(test.channel(c), roi)
                try:
                    p = welch_t_test(a, b)
                except DataError:
                    p = math.nan
                metrics.append((f"welch_p:{c}:{roi.label}", p))
    print(f"{'metric':<32}{'value':>14}")
    for k, v in metrics:
        print(f"{k:<32}{v:>14.6g}")
    if rows:
        _print_roi_table(rows)
    if args.metrics_out:
        _write_metrics_csv(args.metrics_out, metrics)
    if args.roi_out and rows:
        _write_roi_csv(args.roi_out, rows)
    return EXIT_OK


def _read_offsets(text: str) -> np.ndarray:
    p = Path(text)
    if p.exists():
        text = p.read_text()
    vals = [float(t) for t in text.replace(",", " ").split()]
    if not vals:
        raise ConfigurationError("no offsets given")
    return np.array(vals)


def cmd_import_nifti(args) -> int:
    try:
        import nibabel
    except ImportError:
        raise ConfigurationError("import-nifti needs nibabel (pip install 'artifact[nifti]')") from None
    img = np.asarray(nibabel.load(str(args.input)).get_fdata(), dtype=np.float64)
    if img.ndim == 3:
        img = img[:, :, None, :]
    if img.ndim != 4:
        raise DataError(f"expected a 4-D volume (x, y, z, offset), got shape {img.shape}")
    if not 0 <= args.slice < img.shape[2]:
        raise ConfigurationError(f"slice {args.slice} outside 0..{img.shape[2] - 1}")
    frames = np.moveaxis(img[:, :, args.slice, :], -1, 0)
    offsets = _read_offsets(args.offsets)
    m0 = None
    if args.m0_frames:
        idx = sorted({int(i) for i in args.m0_frames.split(",")})
        m0 = frames[idx]
        keep = np.setdiff1d(np.arange(frames.shape[0]), idx)
        frames = frames[keep]
    seq = SpectralSequence(frames, offsets, m0=m0)
    if args.normalize:
        seq = normalize_by_m0(seq)
    write_sequence(args.out, seq, provenance=_provenance(args))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="bald", description=__doc__.split("\n\n")[0])
    ap.add_argument("--version", action="version", version=f"bald {__version__}")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a synthetic grid phantom")
    p.add_argument("out", type=Path)
    p.add_argument("--spec", type=Path, help="JSON phantom spec (default: built-in 3x3 grid)")
    p.add_argument("--noise", choices=["rician", "model", "none"], default="rician")
    p.add_argument("--level", type=float, default=0.05, help="Rician noise deviation")
    p.add_argument("--curve", choices=sorted(NOISE_MODELS), default="A", help="analytic noise model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--clean-out", type=Path)
    p.add_argument("--labels-out", type=Path)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("denoise", help="blind denoising of a sequence container")
    p.add_argument("input", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--t1", type=int, default=10, help="histogram bins for noise estimation")
    p.add_argument("--t2", type=int, default=100, help="knots of the interpolated noise curve")
    p.add_argument("--patch", type=int, default=8)
    p.add_argument("--stride", type=int, default=None, help="default: patch // 2")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--curve-out", type=Path)
    p.add_argument("--curve-in", type=Path, help="use this noise curve instead of estimating one")
    p.add_argument("--normalize", action="store_true", help="divide by M0 first")
    p.add_argument("--backend", choices=["python", "cython"], default=None)
    p.set_defaults(func=cmd_denoise)

    p = sub.add_parser("fit", help="per-pixel multi-pool Lorentzian fit")
    p.add_argument("input", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--pools", default="APT,NOE,MT", help="comma-separated exchange pools")
    p.add_argument("--max-iter", type=int, default=200)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--rois", type=Path, help="label-map container")
    p.add_argument("--roi-out", type=Path)
    p.add_argument("--backend", choices=["python", "cython"], default=None)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("aptw", help="APT-weighted (MTR asymmetry) map")
    p.add_argument("input", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--dw", type=float, default=3.5)
    p.set_defaults(func=cmd_aptw)

    p = sub.add_parser("eval", help="PSNR and ROI statistics of test against ref")
    p.add_argument("ref", type=Path)
    p.add_argument("test", type=Path)
    p.add_argument("--peak", type=float, default=None, help="default: reference maximum")
    p.add_argument("--rois", type=Path, help="label-map container")
    p.add_argument("--channel", help="map channel for ROI statistics (default: all)")
    p.add_argument("--metrics-out", type=Path)
    p.add_argument("--roi-out", type=Path)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("import-nifti", help="convert a 4-D NIfTI volume to a container")
    p.add_argument("input", type=Path)
    p.add_argument("out", type=Path)
    p.add_argument("--offsets", required=True, help="offsets in ppm: a file or a comma list")
    p.add_argument("--slice", type=int, default=0)
    p.add_argument("--m0-frames", help="comma list of volume indices holding M0 acquisitions")
    p.add_argument("--normalize", action="store_true")
    p.set_defaults(func=cmd_import_nifti)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigurationError, ValueError) as exc:
        code = EXIT_DATA if isinstance(exc, DataError) else EXIT_VALIDATION
        print(f"error: {exc}", file=sys.stderr)
        return code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except EstimationError as exc:
        print(f"error: noise estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    except ContractError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
