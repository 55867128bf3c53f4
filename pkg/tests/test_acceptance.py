"""Acceptance gate: one test per numbered criterion, one line printed each.

Criteria 1-8 are fast properties and always run. Criteria 9-11 train at
desk scale on real handwritten/fashion digit sets and only run when
MWDNN_DATA_DIR points at the IDX files (see README for the expected
layout); otherwise they skip with a visible reason. Criterion 12 uses
the real test set when available and a synthetic stand-in when not,
printing which one it got.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the lines.
"""

import math
import os
import time
from pathlib import Path

import numpy as np
import pytest
from scipy import fft as sp_fft

from mwdnn import autodiff, data, export, optics, readout, training

from oracles import propagate_reference, rel_l2


def _report(num, ok, detail):
    print(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'} - {detail}")
    assert ok, f"criterion {num}: {detail}"


def _skip(num, reason):
    print(f"criterion {num:2d}: SKIP - {reason}")
    pytest.skip(reason)


# ---------------------------------------------------------------- 1-8


def test_criterion_01_propagation_oracle():
    t0 = time.perf_counter()
    grid = optics.build_grid(16, 4e-6)
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        wl = rng.uniform(350e-9, 750e-9)
        dist = rng.uniform(0.0, 8e-3)
        amps = rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16))
        field = optics.ComplexField(amps, wl, grid)
        kern = optics.propagation_kernel(grid, wl, dist)
        got = optics.propagate(field, kern).amplitudes
        want = propagate_reference(amps, wl, dist, 4e-6, pad_factor=2)
        worst = max(worst, rel_l2(got, want))
    dt = time.perf_counter() - t0
    _report(1, worst <= 1e-10 and dt < 10.0,
            f"FFT vs direct spectral sum, max rel L2 {worst:.3e} over "
            f"20 random (field, wavelength, distance) triples ({dt:.1f}s)")


def test_criterion_02_unitarity():
    grid = optics.build_grid(16, 4e-6)
    worst = 0.0
    for seed in range(10):
        rng = np.random.default_rng(2000 + seed)
        wl = rng.uniform(350e-9, 750e-9)
        dist = rng.uniform(1e-4, 8e-3)
        kern = optics.propagation_kernel(grid, wl, dist)
        band = np.abs(kern.factors) > 0.5
        g = grid.padded_side
        spectrum = (rng.standard_normal((g, g))
                    + 1j * rng.standard_normal((g, g))) * band
        padded = sp_fft.ifft2(spectrum)
        field = optics.ComplexField(padded, wl, grid)
        out = optics.propagate(field, kern, keep_padded=True)
        drift = abs(out.power() - field.power()) / field.power()
        worst = max(worst, drift)
    _report(2, worst <= 1e-9,
            f"band-limited power conservation on the padded window, "
            f"max relative drift {worst:.3e}")


def test_criterion_03_adjoint_dot_products():
    worst = {"propagation": 0.0, "phase": 0.0, "pooling": 0.0}
    grid = optics.build_grid(12, 4e-6)
    layout = readout.build_layout(optics.build_grid(16, 4e-6), 4, 2,
                                  region_size=3, gap_min=1)
    for seed in range(20):
        rng = np.random.default_rng(3000 + seed)
        wl = rng.uniform(350e-9, 750e-9)
        kern = optics.propagation_kernel(grid, wl, rng.uniform(0, 8e-3))

        def rand_field():
            return optics.ComplexField(
                rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12)),
                wl, grid)

        x, y = rand_field(), rand_field()
        lhs = np.vdot(optics.propagate(x, kern).amplitudes, y.amplitudes)
        rhs = np.vdot(x.amplitudes, autodiff.adjoint_propagate(y, kern).amplitudes)
        worst["propagation"] = max(worst["propagation"], abs(lhs - rhs) / abs(lhs))

        theta = rng.uniform(0, 2 * np.pi, (12, 12))
        lhs = np.vdot(optics.apply_phase(x, theta).amplitudes, y.amplitudes)
        rhs = np.vdot(x.amplitudes, optics.apply_phase(y, -theta).amplitudes)
        worst["phase"] = max(worst["phase"], abs(lhs - rhs) / abs(lhs))

        # pooling is real-linear: <pool(I), s> == <I, scatter(s)>
        imap = rng.standard_normal((2, 16, 16))
        rects = layout.rects.reshape(-1, 4)
        s = rng.standard_normal((2, rects.shape[0]))
        from mwdnn._kernels import ops
        lhs = float((ops.pool_rects(imap, rects) * s).sum())
        rhs = float((imap * ops.scatter_rects(s, rects, 16)).sum())
        worst["pooling"] = max(worst["pooling"], abs(lhs - rhs) / abs(lhs))
    ok = all(v <= 1e-10 for v in worst.values())
    detail = ", ".join(f"{k} {v:.3e}" for k, v in worst.items())
    _report(3, ok, f"adjoint identities over 20 pairs per operator: max {detail}")


def test_criterion_04_end_to_end_gradient():
    t0 = time.perf_counter()
    grid = optics.build_grid(8, 4e-6)
    geometry = optics.SystemGeometry.with_uniform_spacing(
        [700e-9, 400e-9], grid, 2)
    layout = readout.build_layout(grid, 4, 2, region_size=2, gap_min=0)
    rng = np.random.default_rng(42)
    amp = []
    for _ in range(2):
        a = rng.random((3, 8, 8))
        amp.append(a / np.sqrt((a * a).sum(axis=(1, 2), keepdims=True)))
    labels = [rng.integers(0, 4, 3) for _ in range(2)]
    inputs = training.encode_channel_batches(amp, 2)
    kernels = optics.build_kernels(geometry)
    results = []
    for mode in (readout.FilterMode.BROADBAND,
                 readout.FilterMode.WAVELENGTH_SELECTIVE):
        phases = training.init_phases(geometry, 5)

        def loss_fn(values):
            ph = optics.PhaseStack(np.array(values, copy=True))
            _, ints = autodiff.run_forward(inputs, ph, geometry, kernels=kernels)
            scores = readout.pool_batch(ints, layout, mode)
            return training.total_loss(scores, labels, ints, layout, mode).total

        tape, ints = autodiff.run_forward(inputs, phases, geometry,
                                          kernels=kernels)
        scores = readout.pool_batch(ints, layout, mode)
        bd = training.total_loss(scores, labels, ints, layout, mode)
        dldi = bd.dldi
        pooled = readout.scatter_pool_cotangent(bd.dscores, layout, mode, 2)
        for c in range(2):
            dldi[c] += pooled[c]
        grad, _ = autodiff.run_backward(tape, dldi)
        report = autodiff.finite_diff_check(loss_fn, phases, grad,
                                            sample_count=30, seed=7)
        results.append((mode.value, report.max_rel_err))
    dt = time.perf_counter() - t0
    ok = all(err <= 1e-5 for _, err in results) and dt < 30.0
    detail = ", ".join(f"{m} {e:.3e}" for m, e in results)
    _report(4, ok, f"analytic vs central differences on the full loss "
                   f"(8x8, 2 surfaces, 2 bands): {detail} ({dt:.1f}s)")


def test_criterion_05_superposition():
    grid = optics.build_grid(16, 4e-6)
    wls = [700e-9, 550e-9, 400e-9]
    geometry = optics.SystemGeometry.with_uniform_spacing(wls, grid, 2)
    rng = np.random.default_rng(50)
    phases = training.init_phases(geometry, 9)
    inputs = [optics.ComplexField(
        rng.standard_normal((16, 16)) + 1j * rng.standard_normal((16, 16)),
        wl, grid) for wl in wls]
    _, joint_maps = optics.forward(inputs, phases, geometry)
    total = optics.total_intensity(joint_maps)
    parts = []
    for i, wl in enumerate(wls):
        solo_geo = optics.SystemGeometry(wavelengths=(wl,), grid=grid,
                                         layer_count=2,
                                         distances=geometry.distances)
        _, solo_maps = optics.forward([inputs[i]], phases, solo_geo)
        parts.append(solo_maps[0])
    recomposed = parts[0] + parts[1] + parts[2]
    ok = np.array_equal(total, recomposed)
    _report(5, ok, "multi-channel total intensity equals the sum of "
                   "independently propagated per-channel intensities bitwise")


def test_criterion_06_readout_invariants():
    grid = optics.build_grid(200, 4e-6)
    layout = readout.build_layout(grid, 10, 2)
    flat = layout.masks.reshape(-1, 200, 200)
    disjoint = int(flat.sum(axis=0).max()) <= 1

    rng = np.random.default_rng(60)
    maps_a = [rng.random((2, 200, 200)) for _ in range(2)]
    maps_b = [maps_a[0], rng.random((2, 200, 200))]  # perturb channel 1 only
    sel = readout.FilterMode.WAVELENGTH_SELECTIVE
    p_a = readout.pool_batch(maps_a, layout, sel)
    p_b = readout.pool_batch(maps_b, layout, sel)
    isolated = np.array_equal(p_a[:, 0], p_b[:, 0]) \
        and not np.array_equal(p_a[:, 1], p_b[:, 1])

    scores = np.array([[0.1, 0.7, 0.7, 0.2], [0.5, 0.1, 0.2, 0.5]])
    pooled = readout.PooledScores(values=scores)
    picks = readout.classify(pooled)
    ties = picks[0] == 1 and picks[1] == 0  # lowest index wins a tie
    scaled = readout.classify(readout.PooledScores(values=scores * 37.5))
    scale_inv = np.array_equal(picks, scaled)

    ok = disjoint and isolated and ties and scale_inv
    _report(6, ok, "mask disjointness, selective-mode channel isolation, "
                   "argmax tie-break and positive-scale invariance")


def test_criterion_07_loss_units():
    scores = np.full((5, 1, 10), 0.37)
    labels = [np.arange(5) % 10]
    losses, _ = training.softmax_xent(scores[:, 0], labels[0])
    # equal scores stay equal after any logit scale, so xent is ln(10)
    xent_ok = np.all(np.abs(losses - math.log(10.0)) <= 1e-12)

    grid = optics.build_grid(16, 4e-6)
    layout = readout.build_layout(grid, 4, 2, region_size=3, gap_min=1)
    inside = ~layout.outside.astype(bool)
    imap = np.where(inside[0], np.random.default_rng(70).random((16, 16)), 0.0)
    vals, grad = training.energy_penalty(imap[None], layout, 0)
    penalty_ok = float(vals[0]) == 0.0 and not grad.any()

    lr_ok = training.lr_schedule(0.01, 0.5, 4) == 0.000625
    ok = xent_ok and penalty_ok and lr_ok
    _report(7, ok, f"uniform-score cross-entropy ln(10) +- 1e-12, "
                   f"in-band-only energy gives zero penalty, "
                   f"lr_schedule(0.01, 0.5, 4) = {training.lr_schedule(0.01, 0.5, 4)}")


def test_criterion_08_data_round_trips(tmp_path):
    ds = data.synthetic_blobs(categories=10, count=40, seed=8, image_size=28)
    data.save_image_set(tmp_path / "i.idx.gz", tmp_path / "l.idx.gz", ds)
    back = data.load_image_set(tmp_path / "i.idx.gz", tmp_path / "l.idx.gz")
    round_trip = np.array_equal(back.images, ds.images) \
        and np.array_equal(back.labels, ds.labels)

    bad = tmp_path / "bad.idx"
    bad.write_bytes(b"\x00\x01\x08\x02" + bytes(8))
    try:
        data.load_idx(bad)
        validates = False
    except data.IdxFormatError:
        validates = True

    amp = data.preprocess_batch(ds.images[:16], 100)
    powers = (amp * amp).sum(axis=(1, 2))
    power_ok = np.all(np.abs(powers - 1.0) <= 1e-12)

    seen = [np.concatenate([b[0] for b in data.batch_iter([40], 7, seed=3,
                                                          epoch=e)])
            for e in range(2)]
    coverage = all(np.array_equal(np.sort(s), np.arange(40)) for s in seen)
    distinct = not np.array_equal(seen[0], seen[1])

    ok = round_trip and validates and power_ok and coverage and distinct
    _report(8, ok, "IDX round-trip and validation, unit input power "
                   f"(max dev {np.abs(powers - 1.0).max():.1e}), "
                   "exact per-epoch permutation coverage")


# ------------------------------------------------------------- 9-12

_NAMES = {
    "train_images": "train-images-idx3-ubyte",
    "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte",
    "test_labels": "t10k-labels-idx1-ubyte",
}


def _find_set(root: Path, subdirs):
    """Locate one IDX quartet under any of the candidate subdirs."""
    for sub in subdirs:
        base = root / sub if sub else root
        found = {}
        for key, stem in _NAMES.items():
            for suffix in (".gz", ""):
                p = base / (stem + suffix)
                if p.is_file():
                    found[key] = p
                    break
        if len(found) == 4:
            return found
    return None


def _data_root():
    root = os.environ.get("MWDNN_DATA_DIR")
    return Path(root) if root else None


def _load_quartet(files, train_n, test_n):
    train = data.load_image_set(files["train_images"], files["train_labels"])
    test = data.load_image_set(files["test_images"], files["test_labels"])
    clip = lambda ds, n: data.LabeledImageSet(  # noqa: E731
        images=ds.images[:n], labels=ds.labels[:n])
    return clip(train, train_n), clip(test, test_n)


def _desk_geometry(wavelengths):
    grid = optics.build_grid(100, 4e-6)
    return optics.SystemGeometry.with_uniform_spacing(wavelengths, grid, 3)


def _desk_layout(tasks):
    return readout.build_layout(optics.build_grid(100, 4e-6), 10, tasks)


_RUNS = {}


def _desk_run(key, train_sets, test_sets, wavelengths, mode):
    """Train once per key and cache per-task test accuracy (percent)."""
    if key in _RUNS:
        return _RUNS[key]
    geometry = _desk_geometry(wavelengths)
    layout = _desk_layout(len(train_sets))
    config = training.TrainConfig(epochs=3, batch_size=32, seed=0,
                                  filter_mode=mode)
    t0 = time.perf_counter()
    phases, _ = training.train(train_sets, geometry, layout, config)
    metrics = training.evaluate(phases, test_sets, geometry, layout, mode)
    acc = [100.0 * a for a in metrics.accuracy]
    _RUNS[key] = (acc, time.perf_counter() - t0)
    return _RUNS[key]


@pytest.mark.slow
def test_criterion_09_single_task_accuracy():
    root = _data_root()
    files = _find_set(root, ["mnist", ""]) if root else None
    if files is None:
        _skip(9, "handwritten-digit IDX files not found; set MWDNN_DATA_DIR "
                 "(see README for the layout)")
    train, test = _load_quartet(files, 10000, 2000)
    acc, dt = _desk_run("single", [train], [test], [700e-9],
                        readout.FilterMode.BROADBAND)
    _report(9, acc[0] >= 88.0,
            f"single-task digit accuracy {acc[0]:.2f}% "
            f"(10k train / 2k test, 3 epochs, {dt:.0f}s), threshold 88%")


@pytest.mark.slow
def test_criterion_10_two_wavelengths_beat_multiplexed():
    root = _data_root()
    digits = _find_set(root, ["mnist", ""]) if root else None
    fashion = _find_set(root, ["fashion-mnist", "fmnist", "fashion"]) \
        if root else None
    if digits is None or fashion is None:
        _skip(10, "need both digit and fashion IDX quartets under "
                  "MWDNN_DATA_DIR")
    d_train, d_test = _load_quartet(digits, 10000, 2000)
    f_train, f_test = _load_quartet(fashion, 10000, 2000)
    two, dt2 = _desk_run("two-lambda", [d_train, f_train], [d_test, f_test],
                         [700e-9, 400e-9], readout.FilterMode.BROADBAND)
    one, dt1 = _desk_run("one-lambda", [d_train, f_train], [d_test, f_test],
                         [700e-9], readout.FilterMode.BROADBAND)
    margins = [two[i] - one[i] for i in range(2)]
    ok = all(m >= 1.0 for m in margins)
    _report(10, ok,
            f"two-wavelength {two[0]:.2f}%/{two[1]:.2f}% vs multiplexed "
            f"single-wavelength {one[0]:.2f}%/{one[1]:.2f}%, margins "
            f"{margins[0]:+.2f}/{margins[1]:+.2f} points (need >= +1.00 each; "
            f"{dt2 + dt1:.0f}s)")


@pytest.mark.slow
def test_criterion_11_selective_filters_do_not_degrade():
    root = _data_root()
    digits = _find_set(root, ["mnist", ""]) if root else None
    fashion = _find_set(root, ["fashion-mnist", "fmnist", "fashion"]) \
        if root else None
    if digits is None or fashion is None:
        _skip(11, "need both digit and fashion IDX quartets under "
                  "MWDNN_DATA_DIR")
    d_train, d_test = _load_quartet(digits, 10000, 2000)
    f_train, f_test = _load_quartet(fashion, 10000, 2000)
    broad, dtb = _desk_run("two-lambda", [d_train, f_train], [d_test, f_test],
                           [700e-9, 400e-9], readout.FilterMode.BROADBAND)
    sel, dts = _desk_run("selective", [d_train, f_train], [d_test, f_test],
                         [700e-9, 400e-9],
                         readout.FilterMode.WAVELENGTH_SELECTIVE)
    margins = [sel[i] - broad[i] for i in range(2)]
    ok = all(m >= -0.5 for m in margins)
    _report(11, ok,
            f"selective {sel[0]:.2f}%/{sel[1]:.2f}% vs broadband "
            f"{broad[0]:.2f}%/{broad[1]:.2f}%, margins "
            f"{margins[0]:+.2f}/{margins[1]:+.2f} points (tolerance -0.50; "
            f"{dtb + dts:.0f}s)")


def test_criterion_12_untrained_chance_level():
    root = _data_root()
    files = _find_set(root, ["mnist", ""]) if root else None
    if files is not None:
        test = data.load_image_set(files["test_images"], files["test_labels"])
        test = data.LabeledImageSet(images=test.images[:1000],
                                    labels=test.labels[:1000])
        source = "digit test set"
    else:
        # Blob classes are position-coded, so a fixed random optic maps
        # each class to one fixed prediction and per-seed accuracy is
        # quantized in 1/M steps instead of hovering near chance. Pairing
        # the images with independently drawn labels restores the
        # chance-level statistic: P(correct) is exactly 1/M for any
        # fixed system.
        blobs = data.synthetic_blobs(categories=10, count=1000, seed=12,
                                     image_size=28)
        rng = np.random.default_rng(13)
        test = data.LabeledImageSet(images=blobs.images,
                                    labels=rng.permutation(blobs.labels))
        source = "synthetic stand-in, labels decoupled " \
                 "(MWDNN_DATA_DIR not set)"
    geometry = _desk_geometry([700e-9])
    layout = _desk_layout(1)
    phases = training.init_phases(geometry, 0)
    metrics = training.evaluate(phases, [test], geometry, layout,
                                readout.FilterMode.BROADBAND)
    acc = 100.0 * metrics.accuracy[0]
    ok = 2.0 <= acc <= 25.0
    _report(12, ok, f"untrained accuracy {acc:.2f}% over 1000 samples of "
                    f"{source}, expected within [2%, 25%]")
