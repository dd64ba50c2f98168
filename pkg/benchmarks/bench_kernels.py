"""Time the compiled and numpy kernel backends on the default phantom.

    python benchmarks/bench_kernels.py --repeat 3 --fit-pixels 1024
"""

import argparse
import time

import numpy as np

from bald import _kernels
from bald.analysis import DEFAULT_POOLS, pack
from bald.phantom import add_rician_noise, generate_phantom
from bald.pipeline import BaldParams, bald
from bald.svd import PatchConfig, patch_positions


def best_of(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.split("\n\n")[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--fit-pixels", type=int, default=1024)
    ap.add_argument("--level", type=float, default=0.05)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    backends = sorted(_kernels.BACKENDS)
    if "cython" not in backends:
        print("compiled extension not built; timing the numpy backend only")

    seq = add_rician_noise(generate_phantom(), args.level, args.seed)
    Y = np.ascontiguousarray(np.moveaxis(seq.frames, 0, -1))
    pos = patch_positions(seq.height, seq.width, PatchConfig())
    sigma = args.level
    Z = np.ascontiguousarray(seq.frames.reshape(seq.n_offsets, -1).T[: args.fit_pixels])
    p0, lo, hi = pack(DEFAULT_POOLS)
    P0 = np.tile(p0, (Z.shape[0], 1))
    off = np.ascontiguousarray(seq.offsets_ppm)

    rows = []
    results = {}
    for name in backends:
        k = _kernels.get(name)
        t_hard, (acc, wgt) = best_of(lambda: k.patch_hard(Y, sigma, 8, pos), args.repeat)
        G = acc / wgt[..., None]
        t_wien, _ = best_of(lambda: k.patch_wiener(Y, G, sigma, 8, pos), args.repeat)
        t_fit, fit = best_of(lambda: k.lm_fit(off, Z, P0, lo, hi), args.repeat)
        t_bald, _ = best_of(lambda: bald(seq, BaldParams(), backend=name), args.repeat)
        results[name] = (G, fit[0])
        rows.append((name, t_hard, t_wien, t_fit, t_bald))

    print(f"phantom {seq.shape}, {len(pos)} patches, {Z.shape[0]} fitted spectra, best of {args.repeat}")
    print(f"{'backend':<10}{'hard [s]':>10}{'wiener [s]':>12}{'fit [s]':>10}{'bald [s]':>10}")
    for r in rows:
        print(f"{r[0]:<10}" + "".join(f"{v:>10.3f}" if i != 1 else f"{v:>12.3f}" for i, v in enumerate(r[1:])))
    if len(rows) == 2:
        py, cy = dict((r[0], r) for r in rows)["python"], dict((r[0], r) for r in rows)["cython"]
        print("speedup   " + "".join(f"{a / b:>10.2f}x" for a, b in zip(py[1:], cy[1:])))
        dG = np.max(np.abs(results["python"][0] - results["cython"][0]))
        dP = np.max(np.abs(results["python"][1] - results["cython"][1]))
        print(f"max |diff|: hard stage {dG:.2e}, fit params {dP:.2e}")


if __name__ == "__main__":
    main()
