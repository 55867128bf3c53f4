"""Joint multi-task training of shared phase maps.

One optimization problem over all tasks: every batch carries one sample
per task, the per-task cross-entropies on pooled detector scores and the
out-of-band energy penalties are summed, and a single Adam step updates
the shared phase stack. Raw pooled scores are tiny (mean intensity of a
unit-power field over a small band), so they are multiplied by a fixed
logit scale before softmax; classification and energy statistics always
use the raw scores.

Reductions over batch and channels use fixed-order sums, so a given
kernel backend reproduces runs bit-for-bit from (seed, data, config).
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff, data, optics, readout
from ._kernels import ops

__all__ = [
    "TrainConfig",
    "AdamState",
    "EpochStats",
    "EvalMetrics",
    "softmax_xent",
    "energy_penalty",
    "total_loss",
    "default_logit_scale",
    "lr_schedule",
    "adam_step",
    "init_phases",
    "encode_channel_batches",
    "infer_batch",
    "train",
    "evaluate",
    "save_checkpoint",
    "load_checkpoint",
]


@dataclass
class TrainConfig:
    """Knobs for train(); defaults follow the reference recipe."""

    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.01
    lr_decay: float = 0.5
    penalty_weight: float = 1.0
    seed: int = 0
    filter_mode: readout.FilterMode = readout.FilterMode.BROADBAND
    logit_scale: float | None = None  # None: derive from the layout
    phase_init: str = "uniform"       # "uniform" in [0, 2pi) or "zeros"
    fft_workers: int = 1

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch size must be >= 1, got {self.batch_size}")
        if not (self.learning_rate > 0.0):
            raise ValueError(f"learning rate must be > 0, got {self.learning_rate}")
        if not (0.0 < self.lr_decay <= 1.0):
            raise ValueError(f"lr decay must be in (0, 1], got {self.lr_decay}")
        if self.penalty_weight < 0.0:
            raise ValueError(f"penalty weight must be >= 0, got {self.penalty_weight}")
        if self.phase_init not in ("uniform", "zeros"):
            raise ValueError(f"phase init must be 'uniform' or 'zeros', got {self.phase_init!r}")
        if isinstance(self.filter_mode, str):
            self.filter_mode = readout.FilterMode.parse(self.filter_mode)


def softmax_xent(logits: np.ndarray, labels: np.ndarray):
    """Stable softmax cross-entropy.

    logits (B, M), labels (B,) ints -> (losses (B,), dlogits (B, M)).
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError(f"logits must be (batch, categories), got {logits.shape}")
    nb, m = logits.shape
    if labels.shape != (nb,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {nb}")
    if labels.min() < 0 or labels.max() >= m:
        raise ValueError(f"labels must lie in [0, {m}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    z = logits - logits.max(axis=1, keepdims=True)
    ez = np.exp(z)
    denom = ez.sum(axis=1, keepdims=True)
    lse = np.log(denom)
    rows = np.arange(nb)
    losses = (lse[:, 0] - z[rows, labels])
    grad = ez / denom
    grad[rows, labels] -= 1.0
    return losses, grad


def energy_penalty(intensity_map: np.ndarray, layout: readout.DetectorLayout, task: int):
    """Mean squared intensity off task's bands: (1/side^2) sum I(p)^2.

    Accepts (side, side) or (batch, side, side); returns (value(s), grad)
    with grad = (2/side^2) * I off the bands and 0 on them.
    """
    arr = np.ascontiguousarray(intensity_map, dtype=np.float64)
    single = arr.ndim == 2
    if single:
        arr = arr[None]
    if not (0 <= task < layout.tasks):
        raise ValueError(f"task {task} out of range [0, {layout.tasks})")
    scale = 1.0 / float(layout.side * layout.side)
    values, grad = ops.penalty_terms(arr, layout.outside[task], scale)
    if single:
        return float(values[0]), grad[0]
    return values, grad


def default_logit_scale(layout: readout.DetectorLayout) -> float:
    """Score-to-logit factor: side^2 / (bands * band area fraction).

    Raw scores are band means of a unit-power intensity map, so their
    natural size is the reciprocal of this; the factor brings a
    well-focused response to logits of order 10.
    """
    bands = layout.categories * layout.tasks
    fraction = bands * layout.band_area / float(layout.side * layout.side)
    return float(layout.side * layout.side) / (bands * fraction)


@dataclass
class LossBreakdown:
    """total_loss output: batch-mean value, per-task parts, gradients."""

    total: float
    xent: np.ndarray       # (tasks,) batch means
    penalty: np.ndarray    # (tasks,) batch means, before the gamma weight
    dscores: np.ndarray    # (batch, tasks, categories) d total / d raw score
    dldi: list             # per channel (batch, side, side) d total / d intensity


def total_loss(scores: np.ndarray, labels, channel_intensities, layout: readout.DetectorLayout,
               mode: readout.FilterMode, penalty_weight: float = 1.0,
               logit_scale: float | None = None) -> LossBreakdown:
    """Batch-mean joint objective and its gradients.

    scores are raw pooled values (batch, tasks, categories); labels is a
    list of per-task (batch,) int arrays; channel_intensities the
    detector-plane maps the scores were pooled from. The returned dldi
    contains only the penalty's direct dependence on intensity; the
    pooled-score path reaches intensity through dscores and
    readout.scatter_pool_cotangent.
    """
    scores = np.asarray(scores, dtype=np.float64)
    nb, tasks, cats = scores.shape
    if tasks != layout.tasks or cats != layout.categories:
        raise ValueError(
            f"scores shaped {scores.shape[1:]} do not match layout "
            f"({layout.tasks}, {layout.categories})"
        )
    if len(labels) != tasks:
        raise ValueError(f"expected {tasks} label arrays, got {len(labels)}")
    maps = [np.ascontiguousarray(m, dtype=np.float64) for m in channel_intensities]
    scale = default_logit_scale(layout) if logit_scale is None else float(logit_scale)
    if mode is readout.FilterMode.BROADBAND:
        total_map = maps[0].copy()
        for m in maps[1:]:
            total_map += m
        read_maps = [total_map] * tasks
    else:
        if len(maps) != tasks:
            raise ValueError(
                f"selective mode needs one channel per task ({tasks}), got {len(maps)}"
            )
        read_maps = maps
    xent_means = np.empty(tasks)
    pen_means = np.empty(tasks)
    dscores = np.empty_like(scores)
    pen_grads = []
    inv_b = 1.0 / nb
    for i in range(tasks):
        losses, dlogits = softmax_xent(scale * scores[:, i, :], labels[i])
        xent_means[i] = losses.mean()
        dscores[:, i, :] = (scale * inv_b) * dlogits
        pen_vals, pen_grad = energy_penalty(read_maps[i], layout, i)
        pen_means[i] = pen_vals.mean()
        pen_grads.append(pen_grad)
    total = float(xent_means.sum() + penalty_weight * pen_means.sum())
    # direct penalty -> intensity gradients, folded per channel
    w = penalty_weight * inv_b
    if mode is readout.FilterMode.BROADBAND:
        shared = np.zeros_like(read_maps[0])
        for g in pen_grads:
            shared += w * g
        dldi = [shared.copy() for _ in maps]
    else:
        dldi = [w * pen_grads[i] for i in range(tasks)]
    return LossBreakdown(total=total, xent=xent_means, penalty=pen_means,
                         dscores=dscores, dldi=dldi)


def lr_schedule(initial: float, decay: float, epoch: int) -> float:
    """Geometric decay: initial * decay**epoch, epoch counted from 0."""
    if not (initial > 0.0):
        raise ValueError(f"initial rate must be > 0, got {initial}")
    if not (0.0 < decay <= 1.0):
        raise ValueError(f"decay must be in (0, 1], got {decay}")
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return initial * decay**epoch


@dataclass
class AdamState:
    """First/second moment accumulators for the phase stack."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, shape) -> "AdamState":
        return cls(m=np.zeros(shape, dtype=np.float64),
                   v=np.zeros(shape, dtype=np.float64))


def adam_step(phases: optics.PhaseStack, grad: np.ndarray, state: AdamState,
              lr: float):
    """One in-place Adam update with bias correction; returns (phases, state)."""
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    if grad.shape != phases.values.shape:
        raise ValueError(
            f"gradient shape {grad.shape} != phase shape {phases.values.shape}"
        )
    state.step += 1
    ops.adam_update(phases.values, grad, state.m, state.v, state.step,
                    lr, state.beta1, state.beta2, state.eps)
    return phases, state


def init_phases(geometry: optics.SystemGeometry, seed: int, mode: str = "uniform") -> optics.PhaseStack:
    """Fresh phase stack: seeded uniform [0, 2pi) or all zeros."""
    shape = (geometry.layer_count, geometry.grid.side, geometry.grid.side)
    if mode == "zeros":
        return optics.PhaseStack(np.zeros(shape))
    if mode == "uniform":
        rng = np.random.default_rng(seed)
        return optics.PhaseStack(rng.uniform(0.0, 2.0 * np.pi, shape))
    raise ValueError(f"phase init must be 'uniform' or 'zeros', got {mode!r}")


def encode_channel_batches(amplitude_batches, channels: int):
    """Task amplitude batches -> per-channel complex input fields.

    One channel per task maps task i onto channel i unchanged. A single
    channel carries the per-sample sum of all task amplitudes,
    renormalized to unit power (all-zero sums stay zero). Any other
    channel/task combination is rejected.
    """
    tasks = len(amplitude_batches)
    batches = [np.asarray(a, dtype=np.float64) for a in amplitude_batches]
    if channels == tasks:
        return [b.astype(np.complex128) for b in batches]
    if channels == 1:
        summed = batches[0].copy()
        for b in batches[1:]:
            summed += b
        power = (summed * summed).sum(axis=(-2, -1), keepdims=True)
        norm = np.where(power > 0.0, np.sqrt(power), 1.0)
        return [(summed / norm).astype(np.complex128)]
    raise ValueError(
        f"cannot place {tasks} tasks on {channels} wavelength channels "
        "(need one channel per task, or exactly one shared channel)"
    )


def _check_system(geometry, layout, tasks):
    channels = len(geometry.wavelengths)
    if layout.tasks != tasks:
        raise ValueError(f"layout has {layout.tasks} task bands for {tasks} tasks")
    if layout.side != geometry.grid.side:
        raise ValueError(
            f"layout side {layout.side} does not match grid side {geometry.grid.side}"
        )
    if channels not in (tasks, 1):
        raise ValueError(
            f"{channels} wavelength channels cannot serve {tasks} tasks "
            "(need one per task, or exactly one shared channel)"
        )
    return channels


def _forward_scores(inputs, phases, geometry, layout, mode, kernels, workers,
                    record: bool):
    """Shared forward path: fields -> (tape or None, intensities, raw scores)."""
    if record:
        tape, ints = autodiff.run_forward(inputs, phases, geometry,
                                          kernels=kernels, workers=workers)
    else:
        tape = None
        _, ints = autodiff.run_forward(inputs, phases, geometry,
                                       kernels=kernels, workers=workers)
    scores = readout.pool_batch(ints, layout, mode)
    return tape, ints, scores


def infer_batch(phases: optics.PhaseStack, amplitude_batches, geometry: optics.SystemGeometry,
                layout: readout.DetectorLayout, mode: readout.FilterMode,
                kernels=None, workers: int = 1):
    """Raw scores and argmax predictions for a batch of task samples.

    Returns (scores (B, tasks, categories), predictions (B, tasks)).
    """
    channels = _check_system(geometry, layout, len(amplitude_batches))
    inputs = encode_channel_batches(amplitude_batches, channels)
    if kernels is None:
        kernels = optics.build_kernels(geometry)
    _, _, scores = _forward_scores(inputs, phases, geometry, layout, mode,
                                   kernels, workers, record=False)
    return scores, np.argmax(scores, axis=2)


@dataclass
class EpochStats:
    """One epoch of training telemetry (batch-weighted means)."""

    epoch: int
    lr: float
    loss: float
    xent: list
    penalty: list
    accuracy: list
    batches: int
    seconds: float

    def as_dict(self):
        return asdict(self)


def train(datasets, geometry: optics.SystemGeometry, layout: readout.DetectorLayout,
          config: TrainConfig, epoch_callback=None):
    """Optimize shared phase maps over the given task datasets.

    datasets: one data.LabeledImageSet per task (raw images; batches are
    preprocessed on the fly). Returns (phases, history) with history a
    list of EpochStats. epoch_callback, when given, receives each
    EpochStats as it is produced.
    """
    tasks = len(datasets)
    if tasks < 1:
        raise ValueError("need at least one task dataset")
    channels = _check_system(geometry, layout, tasks)
    for ds in datasets:
        if ds.category_count() > layout.categories:
            raise ValueError(
                f"dataset has labels up to {ds.category_count() - 1} but the "
                f"layout only has {layout.categories} categories"
            )
    side = geometry.grid.side
    kernels = optics.build_kernels(geometry)
    phases = init_phases(geometry, config.seed, config.phase_init)
    state = AdamState.zeros(phases.values.shape)
    scale = (default_logit_scale(layout) if config.logit_scale is None
             else config.logit_scale)
    mode = config.filter_mode
    history = []
    sizes = [len(ds) for ds in datasets]
    for epoch in range(config.epochs):
        t0 = time.monotonic()
        lr = lr_schedule(config.learning_rate, config.lr_decay, epoch)
        loss_sum = 0.0
        xent_sum = np.zeros(tasks)
        pen_sum = np.zeros(tasks)
        correct = np.zeros(tasks, dtype=np.int64)
        seen = 0
        batches = 0
        for idx_tuple in data.batch_iter(sizes, config.batch_size, config.seed, epoch):
            amp = [data.preprocess_batch(datasets[i].images[idx], side)
                   for i, idx in enumerate(idx_tuple)]
            labels = [datasets[i].labels[idx] for i, idx in enumerate(idx_tuple)]
            inputs = encode_channel_batches(amp, channels)
            tape, ints, scores = _forward_scores(
                inputs, phases, geometry, layout, mode, kernels,
                config.fft_workers, record=True)
            breakdown = total_loss(scores, labels, ints, layout, mode,
                                   penalty_weight=config.penalty_weight,
                                   logit_scale=scale)
            dldi = breakdown.dldi
            pooled = readout.scatter_pool_cotangent(breakdown.dscores, layout,
                                                    mode, channels)
            for c in range(channels):
                dldi[c] += pooled[c]
            grad, _ = autodiff.run_backward(tape, dldi)
            adam_step(phases, grad, state, lr)
            nb = scores.shape[0]
            loss_sum += breakdown.total * nb
            xent_sum += breakdown.xent * nb
            pen_sum += breakdown.penalty * nb
            preds = np.argmax(scores, axis=2)
            for i in range(tasks):
                correct[i] += int((preds[:, i] == labels[i]).sum())
            seen += nb
            batches += 1
        stats = EpochStats(
            epoch=epoch, lr=lr,
            loss=loss_sum / seen,
            xent=list(xent_sum / seen),
            penalty=list(pen_sum / seen),
            accuracy=list(correct / seen),
            batches=batches,
            seconds=time.monotonic() - t0,
        )
        history.append(stats)
        if epoch_callback is not None:
            epoch_callback(stats)
    return phases, history


@dataclass
class EvalMetrics:
    """Joint-inference test metrics.

    confusion[i, t, p] counts task i samples of true class t predicted
    p. energy_percent[i, t] is the mean detector energy distribution
    (percent per category) over task i samples of true class t, with
    energy_rows[i, t] the number of samples that contributed (samples
    with zero pooled power are left out of the mean).
    """

    accuracy: list
    confusion: np.ndarray       # (tasks, categories, categories) int64
    energy_percent: np.ndarray  # (tasks, categories, categories) float64
    energy_rows: np.ndarray     # (tasks, categories) int64
    samples: list


def evaluate(phases: optics.PhaseStack, datasets, geometry: optics.SystemGeometry,
             layout: readout.DetectorLayout, mode: readout.FilterMode,
             batch_size: int = 64, workers: int = 1) -> EvalMetrics:
    """Joint multi-task inference over paired test sets.

    Samples are paired positionally: step k feeds sample k of every task
    at once (shorter sets wrap around as interference but only their
    first pass is scored). Per-task accuracy therefore reflects
    simultaneous operation including cross-task light.
    """
    tasks = len(datasets)
    channels = _check_system(geometry, layout, tasks)
    side = geometry.grid.side
    kernels = optics.build_kernels(geometry)
    sizes = [len(ds) for ds in datasets]
    total = max(sizes)
    cats = layout.categories
    confusion = np.zeros((tasks, cats, cats), dtype=np.int64)
    energy_sum = np.zeros((tasks, cats, cats), dtype=np.float64)
    energy_rows = np.zeros((tasks, cats), dtype=np.int64)
    for start in range(0, total, batch_size):
        stop = min(start + batch_size, total)
        positions = np.arange(start, stop)
        idxs = [positions % s for s in sizes]
        amp = [data.preprocess_batch(datasets[i].images[idxs[i]], side)
               for i in range(tasks)]
        labels = [datasets[i].labels[idxs[i]] for i in range(tasks)]
        inputs = encode_channel_batches(amp, channels)
        _, _, scores = _forward_scores(inputs, phases, geometry, layout, mode,
                                       kernels, workers, record=False)
        preds = np.argmax(scores, axis=2)
        sums = scores.sum(axis=2)
        for i in range(tasks):
            scored = positions < sizes[i]  # first pass only
            for b in np.nonzero(scored)[0]:
                t = int(labels[i][b])
                confusion[i, t, int(preds[b, i])] += 1
                if sums[b, i] > 0.0:
                    energy_sum[i, t] += 100.0 * scores[b, i] / sums[b, i]
                    energy_rows[i, t] += 1
    energy_percent = np.zeros_like(energy_sum)
    nz = energy_rows > 0
    energy_percent[nz] = energy_sum[nz] / energy_rows[nz][:, None]
    accuracy = [float(np.trace(confusion[i]) / confusion[i].sum())
                if confusion[i].sum() else 0.0 for i in range(tasks)]
    return EvalMetrics(accuracy=accuracy, confusion=confusion,
                       energy_percent=energy_percent, energy_rows=energy_rows,
                       samples=[int(confusion[i].sum()) for i in range(tasks)])


def save_checkpoint(path, phases: optics.PhaseStack, state: AdamState,
                    epoch: int, config: TrainConfig):
    """Resumable snapshot: phases + Adam moments + step + config echo."""
    cfg = asdict(config)
    cfg["filter_mode"] = config.filter_mode.value
    np.savez(path, phases=phases.values, m=state.m, v=state.v,
             step=np.int64(state.step), epoch=np.int64(epoch),
             config=np.bytes_(json.dumps(cfg).encode()))


def load_checkpoint(path):
    """Inverse of save_checkpoint: (phases, state, epoch, config dict)."""
    try:
        with np.load(path) as z:
            phases = optics.PhaseStack(z["phases"].copy())
            state = AdamState(m=z["m"].copy(), v=z["v"].copy(), step=int(z["step"]))
            epoch = int(z["epoch"])
            cfg = json.loads(bytes(z["config"]).decode())
    except (OSError, KeyError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return phases, state, epoch, cfg


class CheckpointError(Exception):
    """Raised when a checkpoint file is missing or malformed."""
