#!/usr/bin/env python3
"""Timing comparison of the numpy and compiled kernel backends.

Runs each hot kernel on training-shaped inputs and reports per-call
times side by side, plus a whole-pipeline figure (one forward/backward
pass at a realistic grid). Usage:

    python benchmarks/bench_kernels.py [--side 200] [--batch 32] [--repeat 30]
"""

import argparse
import time

import numpy as np

from mwdnn._kernels import available_backends


def _time(fn, repeat):
    fn()  # warm-up: first call pays caching and allocation noise
    best = float("inf")
    for _ in range(max(1, repeat)):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_ops(side, batch, repeat):
    rng = np.random.default_rng(0)
    u = rng.standard_normal((batch, side, side)) \
        + 1j * rng.standard_normal((batch, side, side))
    g = rng.standard_normal((batch, side, side)) \
        + 1j * rng.standard_normal((batch, side, side))
    theta = rng.uniform(0, 2 * np.pi, (side, side))
    dldi = rng.standard_normal((batch, side, side))
    imap = rng.random((batch, side, side))
    mask = (rng.random((side, side)) > 0.3).astype(np.float64)
    region = max(2, side // 8)
    rects = np.array([[r, r + region, 0, region]
                      for r in range(0, side - region, max(region + 1, 1))][:10],
                     dtype=np.int64)
    coef = rng.standard_normal((batch, rects.shape[0]))
    param = rng.standard_normal((3, side, side))
    grad = rng.standard_normal((3, side, side))

    backends = available_backends()
    cases = {}
    for name, ops in backends.items():
        mod = ops.phase_modulator(theta)
        acc = np.zeros((side, side))
        m = np.zeros_like(param)
        v = np.zeros_like(param)
        p = param.copy()
        cases[name] = {
            "phase_modulator": lambda o=ops: o.phase_modulator(theta),
            "apply_modulator": lambda o=ops, md=mod: o.apply_modulator(u, md),
            "phase_grad_accum": lambda o=ops, a=acc: o.phase_grad_accum(u, g, a),
            "intensity": lambda o=ops: o.intensity(u),
            "intensity_cotangent": lambda o=ops: o.intensity_cotangent(u, dldi),
            "pool_rects": lambda o=ops: o.pool_rects(imap, rects),
            "scatter_rects": lambda o=ops: o.scatter_rects(coef, rects, side),
            "penalty_terms": lambda o=ops: o.penalty_terms(imap, mask, 1.0 / side**2),
            "adam_update": lambda o=ops, pp=p, mm=m, vv=v:
                o.adam_update(pp, grad, mm, vv, 1, 1e-3, 0.9, 0.999, 1e-8),
        }

    names = list(next(iter(cases.values())).keys())
    cols = list(backends)
    header = f"{'kernel':<22}" + "".join(f"{c:>14}" for c in cols)
    if len(cols) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for kernel in names:
        times = [_time(cases[c][kernel], repeat) for c in cols]
        row = f"{kernel:<22}" + "".join(f"{t * 1e6:>12.1f}us" for t in times)
        if len(times) == 2 and times[1] > 0:
            row += f"{times[0] / times[1]:>9.2f}x"
        print(row)


def bench_pipeline(side, batch, repeat):
    import os

    from mwdnn import autodiff, optics, readout, training

    grid = optics.build_grid(side, 4e-6)
    geometry = optics.SystemGeometry.with_uniform_spacing(
        [700e-9, 400e-9], grid, 3)
    layout = readout.build_layout(grid, 4, 2,
                                  region_size=max(2, side // 8),
                                  gap_min=max(1, side // 16))
    kernels = optics.build_kernels(geometry)
    rng = np.random.default_rng(1)
    amp = []
    for _ in range(2):
        a = rng.random((batch, side, side))
        amp.append(a / np.sqrt((a * a).sum(axis=(1, 2), keepdims=True)))
    labels = [rng.integers(0, 4, batch) for _ in range(2)]
    inputs = training.encode_channel_batches(amp, 2)
    phases = training.init_phases(geometry, 0)
    mode = readout.FilterMode.WAVELENGTH_SELECTIVE

    def step():
        tape, ints = autodiff.run_forward(inputs, phases, geometry,
                                          kernels=kernels)
        scores = readout.pool_batch(ints, layout, mode)
        bd = training.total_loss(scores, labels, ints, layout, mode)
        dldi = bd.dldi
        pooled = readout.scatter_pool_cotangent(bd.dscores, layout, mode, 2)
        for c in range(2):
            dldi[c] += pooled[c]
        autodiff.run_backward(tape, dldi)

    t = _time(step, max(1, repeat // 10))
    from mwdnn._kernels import backend
    print(f"\nfull fwd+bwd step ({backend} backend, batch {batch}, "
          f"{side}x{side}, 2 channels, 3 surfaces): {t * 1e3:.1f} ms")
    print(f"  (set MWDNN_KERNELS={'numpy' if backend == 'cython' else 'cython'}"
          f" and rerun to compare; current MWDNN_KERNELS="
          f"{os.environ.get('MWDNN_KERNELS', 'auto')!r})")


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--side", type=int, default=200)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=30)
    ap.add_argument("--skip-pipeline", action="store_true")
    args = ap.parse_args()
    backends = available_backends()
    print(f"backends available: {', '.join(backends)}")
    print(f"array shapes: batch {args.batch}, grid {args.side}x{args.side}\n")
    bench_ops(args.side, args.batch, args.repeat)
    if not args.skip_pipeline:
        bench_pipeline(args.side, args.batch, args.repeat)


if __name__ == "__main__":
    main()
