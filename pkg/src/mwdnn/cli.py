"""Command-line front end.

Subcommands: train, evaluate, infer, gradcheck, export-phase,
export-heights, metrics. Exit codes: 0 success, 1 unexpected failure,
2 configuration problem, 3 checkpoint/phase-file problem, 4 dataset
problem. Failed gradchecks exit 1.
"""

from __future__ import annotations

import argparse
import sys
import traceback
from pathlib import Path

import numpy as np

from . import autodiff, data, export, hardware, optics, readout, training
from ._kernels import backend as kernel_backend
from .config import ConfigError, RunConfig

EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3
EXIT_DATASET = 4


def _add_config_args(sub, required=True):
    sub.add_argument("-c", "--config", required=required,
                     help="run configuration (INI)")
    sub.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL",
                     help="override one config value (repeatable)")


def _add_out_arg(sub):
    sub.add_argument("-o", "--out", default=None,
                     help="output directory (default: [output] dir from the config)")


def _add_phase_source(sub):
    group = sub.add_mutually_exclusive_group(required=True)
    group.add_argument("--checkpoint", help="training checkpoint (.npz)")
    group.add_argument("--phases", help="raw phase-map file")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config, overrides=args.set)
    if getattr(args, "seed", None) is not None:
        cfg.train.seed = args.seed
    return cfg


def _load_phases(args) -> optics.PhaseStack:
    if args.checkpoint:
        phases, _, _, _ = training.load_checkpoint(args.checkpoint)
        return phases
    try:
        return export.load_phase_raw(args.phases)
    except OSError as exc:
        raise training.CheckpointError(f"cannot read {args.phases}: {exc}") from exc
    except export.ExportError as exc:
        raise training.CheckpointError(str(exc)) from exc


def _out_dir(args, cfg: RunConfig | None) -> Path:
    out = Path(args.out) if args.out else Path(cfg.out_dir if cfg else "runs")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _print_eval(metrics, label="test"):
    for i, acc in enumerate(metrics.accuracy):
        print(f"  task {i}: {label} accuracy {100.0 * acc:.2f}% "
              f"({metrics.samples[i]} samples)")


def cmd_train(args) -> int:
    cfg = _load_config(args)
    geometry = cfg.build_geometry()
    layout = cfg.build_layout()
    datasets = cfg.load_train_sets()
    out = _out_dir(args, cfg)
    wl = ", ".join(f"{w * 1e9:.0f} nm" for w in geometry.wavelengths)
    print(f"grid {cfg.side} px @ {cfg.pitch * 1e6:g} um, {cfg.layers} surfaces, "
          f"gaps {geometry.distances[0] * 1e3:.4f} mm")
    print(f"channels: {wl}; readout: {cfg.filter_mode.value}; "
          f"kernels: {kernel_backend}")
    print(f"tasks: {len(datasets)} ({', '.join(str(len(d)) for d in datasets)} "
          f"samples); batch {cfg.train.batch_size}, {cfg.train.epochs} epochs")

    def on_epoch(stats):
        acc = " ".join(f"{100.0 * a:.1f}%" for a in stats.accuracy)
        print(f"epoch {stats.epoch}: lr {stats.lr:.6g} loss {stats.loss:.4f} "
              f"train acc {acc} ({stats.seconds:.1f}s)")

    phases, history = training.train(datasets, geometry, layout, cfg.train,
                                     epoch_callback=on_epoch)
    state = training.AdamState.zeros(phases.values.shape)
    training.save_checkpoint(out / "checkpoint.npz", phases, state,
                             epoch=cfg.train.epochs, config=cfg.train)
    written = [out / "checkpoint.npz"]
    if cfg.save_raw:
        export.save_phase_raw(out / "phases.raw", phases)
        written.append(out / "phases.raw")
    if cfg.save_pgm:
        written += export.save_phase_pgm(out, phases)
    if cfg.save_history:
        export.save_history_jsonl(out / "history.jsonl", history)
        written.append(out / "history.jsonl")
    (out / "layout.txt").write_text(readout.to_text(layout) + "\n")
    written.append(out / "layout.txt")
    if all(tf.test_images for tf in cfg.task_files):
        test_sets = cfg.load_test_sets()
        metrics = training.evaluate(phases, test_sets, geometry, layout,
                                    cfg.filter_mode,
                                    workers=cfg.train.fft_workers)
        _print_eval(metrics)
        written += export.save_metrics_csv(out, metrics)
    print("wrote: " + ", ".join(str(p) for p in written))
    return 0


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    geometry = cfg.build_geometry()
    layout = cfg.build_layout()
    phases = _load_phases(args)
    if phases.values.shape != (cfg.layers, cfg.side, cfg.side):
        raise training.CheckpointError(
            f"phase stack {phases.values.shape} does not fit the configured "
            f"system ({cfg.layers}, {cfg.side}, {cfg.side})"
        )
    test_sets = cfg.load_test_sets()
    metrics = training.evaluate(phases, test_sets, geometry, layout,
                                cfg.filter_mode, workers=cfg.train.fft_workers)
    _print_eval(metrics)
    if args.out:
        written = export.save_metrics_csv(_out_dir(args, cfg), metrics)
        print("wrote: " + ", ".join(str(p) for p in written))
    return 0


def cmd_infer(args) -> int:
    cfg = _load_config(args)
    geometry = cfg.build_geometry()
    layout = cfg.build_layout()
    phases = _load_phases(args)
    image_files = args.images.split(",")
    tasks = cfg.task_count()
    if len(image_files) != tasks:
        raise data.DatasetError(
            f"--images lists {len(image_files)} files but the system has "
            f"{tasks} tasks"
        )
    stacks = []
    for f in image_files:
        arr = data.load_idx(f.strip())
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3:
            raise data.DatasetError(f"{f}: expected images of rank 2 or 3")
        stacks.append(arr)
    count = min(s.shape[0] for s in stacks)
    if args.limit is not None:
        count = min(count, args.limit)
    kernels = optics.build_kernels(geometry)
    side = geometry.grid.side
    batch = 64
    print("sample " + " ".join(f"task{i}" for i in range(tasks)))
    for start in range(0, count, batch):
        stop = min(start + batch, count)
        amp = [data.preprocess_batch(s[start:stop], side) for s in stacks]
        scores, preds = training.infer_batch(phases, amp, geometry, layout,
                                             cfg.filter_mode, kernels=kernels)
        for b in range(stop - start):
            row = " ".join(str(int(preds[b, i])) for i in range(tasks))
            print(f"{start + b:6d} {row}")
            if args.verbose:
                for i in range(tasks):
                    vals = " ".join(f"{v:.3e}" for v in scores[b, i])
                    print(f"       task{i} scores: {vals}")
    return 0


def _gradcheck_instance(cfg: RunConfig | None, seed: int):
    if cfg is None:
        grid = optics.build_grid(8, 4e-6)
        geometry = optics.SystemGeometry.with_uniform_spacing(
            [700e-9, 400e-9], grid, 2)
        layout = readout.build_layout(grid, 4, 2, region_size=2, gap_min=0)
    else:
        geometry = cfg.build_geometry()
        layout = cfg.build_layout()
    tasks = layout.tasks
    rng = np.random.default_rng(seed)
    side = geometry.grid.side
    batch = 3
    amp = []
    for _ in range(tasks):
        a = rng.random((batch, side, side))
        amp.append(a / np.sqrt((a * a).sum(axis=(1, 2), keepdims=True)))
    labels = [rng.integers(0, layout.categories, batch) for _ in range(tasks)]
    return geometry, layout, amp, labels


def cmd_gradcheck(args) -> int:
    cfg = _load_config(args) if args.config else None
    geometry, layout, amp, labels = _gradcheck_instance(cfg, args.seed or 0)
    channels = len(geometry.wavelengths)
    inputs = training.encode_channel_batches(amp, channels)
    kernels = optics.build_kernels(geometry)
    all_ok = True
    for mode in (readout.FilterMode.BROADBAND,
                 readout.FilterMode.WAVELENGTH_SELECTIVE):
        if mode is readout.FilterMode.WAVELENGTH_SELECTIVE \
                and channels != layout.tasks:
            print(f"{mode.value}: skipped (needs one channel per task)")
            continue
        phases = training.init_phases(geometry, (args.seed or 0) + 1)

        def loss_fn(values):
            ph = optics.PhaseStack(np.array(values, copy=True))
            tape, ints = autodiff.run_forward(inputs, ph, geometry, kernels=kernels)
            scores = readout.pool_batch(ints, layout, mode)
            bd = training.total_loss(scores, labels, ints, layout, mode)
            return bd.total

        tape, ints = autodiff.run_forward(inputs, phases, geometry, kernels=kernels)
        scores = readout.pool_batch(ints, layout, mode)
        bd = training.total_loss(scores, labels, ints, layout, mode)
        dldi = bd.dldi
        pooled = readout.scatter_pool_cotangent(bd.dscores, layout, mode, channels)
        for c in range(channels):
            dldi[c] += pooled[c]
        grad, _ = autodiff.run_backward(tape, dldi)
        report = autodiff.finite_diff_check(loss_fn, phases, grad,
                                            step=args.step,
                                            sample_count=args.samples,
                                            seed=args.seed or 0)
        ok = report.ok(args.tolerance)
        all_ok = all_ok and ok
        print(f"{mode.value}: max rel err {report.max_rel_err:.3e} over "
              f"{report.checked} entries (step {report.step:g}, "
              f"{report.skipped_small} below magnitude floor) "
              f"{'PASS' if ok else 'FAIL'}")
    return 0 if all_ok else 1


def cmd_export_phase(args) -> int:
    phases = _load_phases(args)
    out = _out_dir(args, None)
    export.save_phase_raw(out / "phases.raw", phases)
    written = [out / "phases.raw"]
    if not args.no_pgm:
        written += export.save_phase_pgm(out, phases)
    print("wrote: " + ", ".join(str(p) for p in written))
    return 0


def cmd_export_heights(args) -> int:
    phases = _load_phases(args)
    if args.config:
        cfg = _load_config(args)
        wavelengths = cfg.wavelengths
    elif args.wavelengths:
        wavelengths = [float(w) for w in args.wavelengths.split(",")]
    else:
        print("error: need --wavelengths or a config with [geometry] wavelengths",
              file=sys.stderr)
        return EXIT_CONFIG
    heights = hardware.solve_doe_heights(phases, wavelengths,
                                         args.index, design=args.design,
                                         max_order=args.max_order)
    # -o names the .npz file directly; anything else is an output directory
    if args.out and args.out.endswith(".npz"):
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
    else:
        path = _out_dir(args, None) / "heights.npz"
    np.savez(path, heights=heights.heights, orders=heights.orders,
             design_wavelength=heights.design_wavelength,
             max_order=heights.max_order)
    lo, hi = heights.depth_range()
    print(f"etch depth range: {lo * 1e6:.3f} .. {hi * 1e6:.3f} um, "
          f"orders up to {int(heights.orders.max())}")
    print(f"wrote: {path}")
    return 0


def cmd_metrics(args) -> int:
    cfg = _load_config(args)
    geometry = cfg.build_geometry()
    m = hardware.optical_metrics(geometry, args.frame_rate)
    print(f"gaps: {len(geometry.distances)} x {geometry.distances[0] * 1e3:.4f} mm, "
          f"total path {m.path_length * 1e3:.4f} mm")
    print(f"light transit: {m.propagation_seconds * 1e9:.4f} ns")
    print(f"frame interval at {args.frame_rate:g} Hz: "
          f"{m.frame_seconds * 1e9:.4f} ns")
    print(f"inference latency: {m.total_seconds * 1e9:.4f} ns")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mwdnn",
        description="Simulate and train multi-wavelength diffractive networks.")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="tracebacks and extra detail")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("train", help="optimize phase maps from a config")
    _add_config_args(p)
    _add_out_arg(p)
    p.add_argument("--seed", type=int, default=None, help="override [train] seed")
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("evaluate", help="score a trained system on test data")
    _add_config_args(p)
    _add_phase_source(p)
    _add_out_arg(p)
    p.set_defaults(func=cmd_evaluate, seed=None)

    p = subs.add_parser("infer", help="classify images with a trained system")
    _add_config_args(p)
    _add_phase_source(p)
    p.add_argument("--images", required=True,
                   help="comma-separated IDX image files, one per task")
    p.add_argument("--limit", type=int, default=None,
                   help="classify at most this many samples")
    p.set_defaults(func=cmd_infer, seed=None)

    p = subs.add_parser("gradcheck",
                        help="audit analytic gradients with finite differences")
    _add_config_args(p, required=False)
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--samples", type=int, default=25,
                   help="random phase entries to probe per mode")
    p.add_argument("--tolerance", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = subs.add_parser("export-phase", help="write raw phase maps and previews")
    _add_phase_source(p)
    _add_out_arg(p)
    p.add_argument("--no-pgm", action="store_true", help="skip PGM previews")
    p.set_defaults(func=cmd_export_phase)

    p = subs.add_parser("export-heights",
                        help="solve per-element etch depths for fabrication")
    _add_phase_source(p)
    _add_out_arg(p)
    p.add_argument("-c", "--config", default=None,
                   help="config supplying the wavelength list")
    p.add_argument("--set", action="append", default=[], metavar="SEC.KEY=VAL")
    p.add_argument("--wavelengths", default=None,
                   help="comma-separated wavelengths in meters")
    p.add_argument("--index", type=float, required=True,
                   help="refractive index of the substrate")
    p.add_argument("--design", type=int, default=0,
                   help="index of the design wavelength in the list")
    p.add_argument("--max-order", type=int, default=8)
    p.set_defaults(func=cmd_export_heights, seed=None)

    p = subs.add_parser("metrics", help="optical path and latency figures")
    _add_config_args(p)
    p.add_argument("--frame-rate", type=float, default=30e9,
                   help="source modulation rate in Hz")
    p.set_defaults(func=cmd_metrics, seed=None)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        code = EXIT_CONFIG
    except training.CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        code = EXIT_CHECKPOINT
    except data.DatasetError as exc:
        print(f"dataset error: {exc}", file=sys.stderr)
        code = EXIT_DATASET
    except Exception as exc:  # pragma: no cover - defensive
        if args.verbose:
            traceback.print_exc()
        print(f"error: {exc}", file=sys.stderr)
        code = 1
    return code


if __name__ == "__main__":
    sys.exit(main())
