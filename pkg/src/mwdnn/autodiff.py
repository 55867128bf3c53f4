"""Reverse-mode gradients for the propagate/modulate pipeline.

The forward pass records the minimum state needed for exact adjoints:
the post-surface field at every layer plus the detector-plane field, per
wavelength channel. Cotangents follow the convention g = 2 dL/d(conj u)
for a real loss L, under which a linear step y = A u pulls back as
g_u = A^H g_y and the intensity I = |u|^2 contributes g_u = 2 (dL/dI) u.

The adjoint of a propagation hop is the same pad/FFT/scale/crop pipeline
with conjugated spectral factors: padding and cropping are mutual
adjoints and the unnormalized-FFT factors cancel. The phase-map gradient
collected at surface l is

    dL/dtheta_l = sum over channels and batch of Im(conj(u_post) g_post)

where u_post is the recorded post-surface field and g_post the cotangent
arriving there. Accumulation order (channel-major, then batch) is fixed,
so gradients are reproducible for a given kernel backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import optics
from ._kernels import ops

__all__ = [
    "GradientTape",
    "FiniteDiffReport",
    "run_forward",
    "run_backward",
    "forward_fields",
    "backward_fields",
    "adjoint_propagate",
    "finite_diff_check",
]


@dataclass
class GradientTape:
    """State captured by one recorded forward pass (batched)."""

    geometry: optics.SystemGeometry
    kernels: list
    modulators: list       # per layer: (side, side) complex128 exp(i theta)
    post_surface: list     # [channel][layer] -> (batch, side, side) complex128
    detector_fields: list  # [channel] -> (batch, side, side) complex128
    batch_size: int
    workers: int = 1


def _as_channel_batches(inputs, geometry):
    out = []
    k = geometry.grid.side
    for c, arr in enumerate(inputs):
        a = np.ascontiguousarray(arr, dtype=np.complex128)
        if a.ndim != 3 or a.shape[1:] != (k, k):
            raise ValueError(
                f"channel {c}: expected (batch, {k}, {k}) input, got {a.shape}"
            )
        out.append(a)
    if len(out) != len(geometry.wavelengths):
        raise ValueError(
            f"got {len(out)} channel batches for {len(geometry.wavelengths)} wavelengths"
        )
    sizes = {a.shape[0] for a in out}
    if len(sizes) != 1:
        raise ValueError(f"channel batches disagree on batch size: {sorted(sizes)}")
    return out


def run_forward(inputs, phases: optics.PhaseStack, geometry: optics.SystemGeometry,
                kernels=None, workers: int = 1):
    """Record a batched forward pass.

    Parameters
    ----------
    inputs : list of (batch, side, side) complex arrays, one per channel.
    kernels : optional optics.build_kernels(geometry) output to reuse.

    Returns
    -------
    (tape, intensities) where intensities[c] is (batch, side, side)
    float64 at the detector plane. The math is identical to
    optics.forward, so single-sample results agree bitwise with it.
    """
    if phases.layer_count != geometry.layer_count:
        raise ValueError(
            f"phase stack has {phases.layer_count} layers, geometry expects "
            f"{geometry.layer_count}"
        )
    if phases.side != geometry.grid.side:
        raise ValueError(
            f"phase maps are {phases.side} px, grid side is {geometry.grid.side}"
        )
    batches = _as_channel_batches(inputs, geometry)
    if kernels is None:
        kernels = optics.build_kernels(geometry)
    layers = phases.layer_count
    mods = [ops.phase_modulator(np.ascontiguousarray(phases.values[l]))
            for l in range(layers)]
    post_surface = []
    detector_fields = []
    intensities = []
    for c, u in enumerate(batches):
        per_layer = []
        for l in range(layers):
            u = optics._propagate_batch(u, kernels[c][l], workers=workers)
            u = ops.apply_modulator(u, mods[l])
            per_layer.append(u)
        u = optics._propagate_batch(u, kernels[c][layers], workers=workers)
        post_surface.append(per_layer)
        detector_fields.append(u)
        intensities.append(ops.intensity(u))
    tape = GradientTape(geometry=geometry, kernels=kernels, modulators=mods,
                        post_surface=post_surface, detector_fields=detector_fields,
                        batch_size=batches[0].shape[0], workers=workers)
    return tape, intensities


def run_backward(tape: GradientTape, dldi):
    """Pull intensity cotangents back to the phase maps.

    Parameters
    ----------
    dldi : list of (batch, side, side) float64, dL/dI per channel at the
        detector plane.

    Returns
    -------
    (phase_grad, input_cotangents): phase_grad is (layers, side, side)
    float64 summed over channels and batch; input_cotangents[c] is the
    (batch, side, side) complex cotangent 2 dL/d(conj u) at the input
    plane, useful for input-sensitivity checks.
    """
    geometry = tape.geometry
    layers = geometry.layer_count
    k = geometry.grid.side
    channels = len(geometry.wavelengths)
    if len(dldi) != channels:
        raise ValueError(f"expected {channels} cotangent maps, got {len(dldi)}")
    grad = np.zeros((layers, k, k), dtype=np.float64)
    input_cotangents = []
    for c in range(channels):
        d = np.ascontiguousarray(dldi[c], dtype=np.float64)
        if d.shape != tape.detector_fields[c].shape:
            raise ValueError(
                f"channel {c}: cotangent shape {d.shape} does not match the "
                f"recorded batch {tape.detector_fields[c].shape}"
            )
        g = ops.intensity_cotangent(tape.detector_fields[c], d)
        g = optics._propagate_batch(g, tape.kernels[c][layers], conjugate=True,
                                    workers=tape.workers)
        for l in range(layers - 1, -1, -1):
            ops.phase_grad_accum(tape.post_surface[c][l], g, grad[l])
            g = ops.apply_modulator_conj(g, tape.modulators[l])
            g = optics._propagate_batch(g, tape.kernels[c][l], conjugate=True,
                                        workers=tape.workers)
        input_cotangents.append(g)
    return grad, input_cotangents


def forward_fields(fields, phases: optics.PhaseStack, geometry: optics.SystemGeometry,
                   kernels=None):
    """Single-sample wrapper: ComplexFields in, (tape, intensity maps) out."""
    for f, w in zip(fields, geometry.wavelengths):
        if f.wavelength != w:
            raise ValueError(
                f"input field wavelength {f.wavelength:g} does not match "
                f"geometry channel {w:g}"
            )
        if f.grid != geometry.grid:
            raise ValueError("input field grid does not match geometry grid")
        if f.is_padded:
            raise ValueError("recorded forward expects working-raster fields")
    inputs = [f.amplitudes[None] for f in fields]
    tape, intensities = run_forward(inputs, phases, geometry, kernels=kernels)
    return tape, [i[0] for i in intensities]


def backward_fields(tape: GradientTape, dldi_maps):
    """Single-sample wrapper around run_backward; returns the phase gradient."""
    grad, _ = run_backward(tape, [np.asarray(d, dtype=np.float64)[None]
                                  for d in dldi_maps])
    return grad


def adjoint_propagate(field: optics.ComplexField, kernel: optics.PropagationKernel, *,
                      keep_padded: bool = False) -> optics.ComplexField:
    """Apply the adjoint of propagate(): conjugated spectral factors.

    For any working-raster fields x, y:
    vdot(propagate(x), y) == vdot(x, adjoint_propagate(y)).
    """
    return optics._hop_single(field, kernel, conjugate=True, keep_padded=keep_padded)


@dataclass
class FiniteDiffReport:
    """Outcome of a central-difference gradient audit."""

    max_rel_err: float
    mean_rel_err: float
    checked: int
    skipped_small: int
    step: float

    def ok(self, tol: float = 1e-5) -> bool:
        return self.checked > 0 and self.max_rel_err <= tol


def finite_diff_check(loss_fn, phases: optics.PhaseStack, analytic_grad: np.ndarray,
                      step: float = 1e-6, sample_count: int | None = None,
                      seed: int = 0, magnitude_floor: float = 1e-8) -> FiniteDiffReport:
    """Audit an analytic phase gradient with central differences.

    ``loss_fn`` maps a (layers, side, side) phase array to a float loss.
    Entries whose analytic derivative magnitude is at or below
    ``magnitude_floor`` are skipped: their central difference is mostly
    cancellation noise and says nothing about correctness. With
    ``sample_count`` set, that many coordinates are drawn (seeded,
    without replacement) instead of sweeping all of them.
    """
    values = phases.values
    grad = np.asarray(analytic_grad, dtype=np.float64)
    if grad.shape != values.shape:
        raise ValueError(f"gradient shape {grad.shape} != phase shape {values.shape}")
    total = values.size
    if sample_count is None or sample_count >= total:
        flat_idx = np.arange(total)
    else:
        rng = np.random.default_rng(seed)
        flat_idx = rng.choice(total, size=sample_count, replace=False)
    work = values.copy()
    flat = work.reshape(-1)
    gflat = grad.reshape(-1)
    errs = []
    skipped = 0
    for i in flat_idx:
        an = gflat[i]
        if abs(an) <= magnitude_floor:
            skipped += 1
            continue
        orig = flat[i]
        flat[i] = orig + step
        hi = loss_fn(work)
        flat[i] = orig - step
        lo = loss_fn(work)
        flat[i] = orig
        fd = (hi - lo) / (2.0 * step)
        errs.append(abs(fd - an) / max(abs(fd), abs(an)))
    if errs:
        max_err = float(np.max(errs))
        mean_err = float(np.mean(errs))
    else:
        max_err = float("nan")
        mean_err = float("nan")
    return FiniteDiffReport(max_rel_err=max_err, mean_rel_err=mean_err,
                            checked=len(errs), skipped_small=skipped, step=step)
