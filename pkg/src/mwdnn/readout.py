"""Segmented detector plane: region layout, pooling, classification.

The detector carries one square region per category, arranged on an
r x c grid of cells (r = largest divisor of the category count not
exceeding its square root, so 10 -> 2x5, 4 -> 2x2, primes -> 1xM) with
each region centered in its cell. A region is split horizontally into
one equal-height band per task, top band = task 0. Bands never overlap
and adjacent regions keep a minimum gap, both enforced at build time.

Scores are arithmetic means of intensity over a band. Two readout
modes: BROADBAND pools the incoherent sum of all channels for every
task; WAVELENGTH_SELECTIVE pools channel i's intensity alone for task i,
which models an ideal per-band spectral filter glued onto that task's
rows of the detector.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from ._kernels import ops
from .optics import GridSpec

__all__ = [
    "FilterMode",
    "DetectorLayout",
    "PooledScores",
    "build_layout",
    "pool",
    "pool_batch",
    "scatter_pool_cotangent",
    "classify",
    "energy_distribution",
    "to_text",
]


class FilterMode(enum.Enum):
    BROADBAND = "broadband"
    WAVELENGTH_SELECTIVE = "selective"

    @classmethod
    def parse(cls, text: str) -> "FilterMode":
        t = text.strip().lower().replace("_", "-")
        if t in ("broadband", "none"):
            return cls.BROADBAND
        if t in ("selective", "wavelength-selective"):
            return cls.WAVELENGTH_SELECTIVE
        raise ValueError(
            f"unknown filter mode {text!r} (expected 'broadband' or 'selective')"
        )


@dataclass(eq=False)
class DetectorLayout:
    """Band geometry on the detector plane.

    masks[j, i] is the boolean band of category j for task i;
    rects[i, j] = (r0, r1, c0, c1) half-open bounds of the same band;
    outside[i] is 1.0 off task i's bands and 0.0 on them (float64, the
    shape the penalty kernels want).
    """

    side: int
    categories: int
    tasks: int
    region_size: int
    band_height: int
    masks: np.ndarray    # (categories, tasks, side, side) bool
    rects: np.ndarray    # (tasks, categories, 4) int64
    outside: np.ndarray  # (tasks, side, side) float64

    @property
    def band_area(self) -> int:
        return self.band_height * self.region_size


@dataclass
class PooledScores:
    """Per-task mean band intensities, shape (tasks, categories)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError(f"scores must be (tasks, categories), got {self.values.shape}")


def _grid_shape(categories: int):
    rows = 1
    for m in range(int(np.sqrt(categories)), 0, -1):
        if categories % m == 0:
            rows = m
            break
    return rows, categories // rows


def build_layout(grid, categories: int, tasks: int, region_size: int | None = None,
                 gap_min: int | None = None) -> DetectorLayout:
    """Construct a disjoint band layout for the given raster.

    ``grid`` is a GridSpec or a bare side length. Region size defaults
    to side // 8 and the minimum inter-region gap to side // 16. Raises
    if the requested regions cannot fit disjointly with those margins.
    """
    side = grid.side if isinstance(grid, GridSpec) else int(grid)
    if categories < 2:
        raise ValueError(f"need at least 2 categories, got {categories}")
    if tasks < 1:
        raise ValueError(f"need at least 1 task, got {tasks}")
    if region_size is None:
        region_size = side // 8
    if gap_min is None:
        gap_min = side // 16
    if region_size < tasks:
        raise ValueError(
            f"region size {region_size} cannot hold {tasks} bands of height >= 1"
        )
    rows, cols = _grid_shape(categories)
    cell_h, cell_w = side // rows, side // cols
    band_height = region_size // tasks
    used_h = band_height * tasks
    if region_size > cell_w or used_h > cell_h:
        raise ValueError(
            f"{categories} regions of {region_size} px do not fit a {side} px "
            f"detector ({rows}x{cols} cells of {cell_h}x{cell_w})"
        )
    if cols > 1 and cell_w - region_size < gap_min:
        raise ValueError(
            f"horizontal gap {cell_w - region_size} px is under the minimum {gap_min}"
        )
    if rows > 1 and cell_h - used_h < gap_min:
        raise ValueError(
            f"vertical gap {cell_h - used_h} px is under the minimum {gap_min}"
        )
    oy = (side - rows * cell_h) // 2
    ox = (side - cols * cell_w) // 2
    masks = np.zeros((categories, tasks, side, side), dtype=bool)
    rects = np.zeros((tasks, categories, 4), dtype=np.int64)
    for j in range(categories):
        gy, gx = divmod(j, cols)
        top = oy + gy * cell_h + (cell_h - used_h) // 2
        left = ox + gx * cell_w + (cell_w - region_size) // 2
        for i in range(tasks):
            r0 = top + i * band_height
            r1 = r0 + band_height
            c0, c1 = left, left + region_size
            masks[j, i, r0:r1, c0:c1] = True
            rects[i, j] = (r0, r1, c0, c1)
    coverage = masks.sum(axis=(0, 1))
    if coverage.max() > 1:
        raise AssertionError("internal error: bands overlap")
    outside = np.empty((tasks, side, side), dtype=np.float64)
    for i in range(tasks):
        outside[i] = 1.0 - masks[:, i].any(axis=0).astype(np.float64)
    return DetectorLayout(side=side, categories=categories, tasks=tasks,
                          region_size=region_size, band_height=band_height,
                          masks=masks, rects=rects, outside=outside)


def _check_maps(intensity_maps, layout, mode):
    maps = [np.ascontiguousarray(m, dtype=np.float64) for m in intensity_maps]
    if not maps:
        raise ValueError("no intensity maps given")
    for m in maps:
        if m.shape[-2:] != (layout.side, layout.side):
            raise ValueError(
                f"intensity map shape {m.shape[-2:]} does not match detector "
                f"side {layout.side}"
            )
    if mode is FilterMode.WAVELENGTH_SELECTIVE and len(maps) != layout.tasks:
        raise ValueError(
            f"selective readout needs one channel per task "
            f"({layout.tasks}), got {len(maps)}"
        )
    return maps


def pool_batch(intensity_maps, layout: DetectorLayout, mode: FilterMode) -> np.ndarray:
    """(B, side, side) channel maps -> (B, tasks, categories) raw scores."""
    maps = _check_maps(intensity_maps, layout, mode)
    nb = maps[0].shape[0]
    out = np.empty((nb, layout.tasks, layout.categories), dtype=np.float64)
    if mode is FilterMode.BROADBAND:
        total = maps[0].copy()
        for m in maps[1:]:
            total += m
        for i in range(layout.tasks):
            out[:, i, :] = ops.pool_rects(total, layout.rects[i])
    else:
        for i in range(layout.tasks):
            out[:, i, :] = ops.pool_rects(maps[i], layout.rects[i])
    return out


def scatter_pool_cotangent(coef: np.ndarray, layout: DetectorLayout, mode: FilterMode,
                           channels: int):
    """Adjoint of pool_batch: (B, tasks, categories) -> per-channel dL/dI maps.

    In broadband mode every channel receives the same scattered map
    (the pooled quantity is the channel sum); in selective mode task i's
    row lands on channel i only and other channels get zeros.
    """
    coef = np.ascontiguousarray(coef, dtype=np.float64)
    nb = coef.shape[0]
    if mode is FilterMode.BROADBAND:
        shared = np.zeros((nb, layout.side, layout.side), dtype=np.float64)
        for i in range(layout.tasks):
            shared += ops.scatter_rects(np.ascontiguousarray(coef[:, i, :]),
                                        layout.rects[i], layout.side)
        return [shared.copy() for _ in range(channels)]
    if channels != layout.tasks:
        raise ValueError(
            f"selective readout needs one channel per task "
            f"({layout.tasks}), got {channels}"
        )
    return [ops.scatter_rects(np.ascontiguousarray(coef[:, i, :]),
                              layout.rects[i], layout.side)
            for i in range(layout.tasks)]


def pool(intensity_maps, layout: DetectorLayout, mode: FilterMode) -> PooledScores:
    """Single-sample pooling: list of (side, side) maps -> PooledScores."""
    maps = [np.asarray(m, dtype=np.float64)[None] for m in intensity_maps]
    return PooledScores(values=pool_batch(maps, layout, mode)[0])


def classify(scores: PooledScores) -> np.ndarray:
    """Winning category per task; ties go to the lowest category index."""
    return np.argmax(scores.values, axis=1)


def energy_distribution(scores: PooledScores) -> np.ndarray:
    """Percent of each task's pooled power per category (rows sum to 100).

    A task row whose pooled power is exactly zero comes back as all
    zeros; callers doing statistics should drop such rows.
    """
    vals = scores.values
    sums = vals.sum(axis=1, keepdims=True)
    out = np.zeros_like(vals)
    nz = sums[:, 0] > 0.0
    out[nz] = 100.0 * vals[nz] / sums[nz]
    return out


def to_text(layout: DetectorLayout, width: int = 64) -> str:
    """ASCII sketch of the detector plane plus a band table."""
    width = min(width, layout.side)
    step = layout.side / width
    category_char = "0123456789abcdefghijklmnopqrstuvwxyz"
    any_band = layout.masks.any(axis=1)  # (categories, side, side)
    lines = [
        f"detector {layout.side} x {layout.side} px, {layout.categories} categories, "
        f"{layout.tasks} task bands per region "
        f"({layout.band_height} x {layout.region_size} px each)"
    ]
    for bi in range(width):
        r0, r1 = int(bi * step), max(int((bi + 1) * step), int(bi * step) + 1)
        row = []
        for bj in range(width):
            c0, c1 = int(bj * step), max(int((bj + 1) * step), int(bj * step) + 1)
            ch = "."
            for j in range(layout.categories):
                if any_band[j, r0:r1, c0:c1].any():
                    ch = category_char[j % len(category_char)]
                    break
            row.append(ch)
        lines.append("".join(row))
    lines.append("bands (task, category) -> rows x cols:")
    for i in range(layout.tasks):
        for j in range(layout.categories):
            r0, r1, c0, c1 = layout.rects[i, j]
            lines.append(f"  task {i} cat {j}: [{r0}:{r1}) x [{c0}:{c1})")
    return "\n".join(lines)
