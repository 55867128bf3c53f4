"""Fabrication and deployment helpers.

A trained phase map assigns every element a phase in [0, 2 pi) that all
wavelength channels are supposed to see. A surface-relief element of
height h delays wavelength w by 2 pi (n(w) - 1) h / w, so a height that
realizes the target phase at the design wavelength exactly can only
approximate it at the others. Adding whole wraps at the design
wavelength (h_m for order m) leaves the design channel untouched but
changes the phase elsewhere, which makes the order a free variable worth
optimizing per element.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .optics import PhaseStack, SystemGeometry

__all__ = [
    "SPEED_OF_LIGHT",
    "HeightMap",
    "OpticalMetrics",
    "constant_index",
    "solve_doe_heights",
    "optical_metrics",
]

SPEED_OF_LIGHT = 299792458.0  # m/s, exact

_TWO_PI = 2.0 * math.pi


def constant_index(value: float):
    """Dispersionless material model n(wavelength) = value."""
    if not (value > 1.0):
        raise ValueError(f"refractive index must exceed 1, got {value}")
    return lambda wavelength: value


@dataclass
class HeightMap:
    """Etch depths per element, with the wrap order that produced them."""

    heights: np.ndarray       # (layers, side, side) float64, meters
    orders: np.ndarray        # (layers, side, side) uint8
    design_wavelength: float
    max_order: int

    def depth_range(self):
        return float(self.heights.min()), float(self.heights.max())


def _wrap_distance(delta):
    """Absolute phase distance on the circle, in [0, pi]."""
    d = np.mod(delta, _TWO_PI)
    return np.minimum(d, _TWO_PI - d)


def solve_doe_heights(phases: PhaseStack, wavelengths, index_fn,
                      design: int = 0, max_order: int = 8) -> HeightMap:
    """Per-element etch depths realizing the phase map across channels.

    For each element the candidate heights are
    h_m = (phase + 2 pi m) * w1 / (2 pi (n(w1) - 1)), m = 0..max_order,
    with w1 = wavelengths[design]; the m minimizing the summed squared
    wrapped phase error at the remaining wavelengths wins, ties to the
    smaller m. With a single wavelength every m is exact and m = 0 (the
    shallowest etch) is chosen.
    """
    if callable(index_fn):
        n_of = index_fn
    else:
        n_of = constant_index(float(index_fn))
    wavelengths = [float(w) for w in wavelengths]
    if not wavelengths:
        raise ValueError("at least one wavelength is required")
    if not (0 <= design < len(wavelengths)):
        raise ValueError(f"design index {design} out of range")
    if max_order < 0 or max_order > 255:
        raise ValueError(f"max_order must be in [0, 255], got {max_order}")
    w1 = wavelengths[design]
    n1 = n_of(w1)
    if not (n1 > 1.0):
        raise ValueError(f"index at the design wavelength must exceed 1, got {n1}")
    others = [w for i, w in enumerate(wavelengths) if i != design]
    phi = phases.wrapped()
    scale = w1 / (_TWO_PI * (n1 - 1.0))
    best_err = None
    best_h = None
    best_m = None
    for m in range(max_order + 1):
        h = (phi + _TWO_PI * m) * scale
        err = np.zeros_like(phi)
        for w in others:
            achieved = _TWO_PI * (n_of(w) - 1.0) * h / w
            err += _wrap_distance(achieved - phi) ** 2
        if best_err is None:
            best_err, best_h = err, h
            best_m = np.zeros(phi.shape, dtype=np.uint8)
        else:
            better = err < best_err  # strict: ties keep the smaller order
            best_err = np.where(better, err, best_err)
            best_h = np.where(better, h, best_h)
            best_m = np.where(better, np.uint8(m), best_m)
    return HeightMap(heights=best_h, orders=best_m,
                     design_wavelength=w1, max_order=max_order)


@dataclass
class OpticalMetrics:
    """Latency book-keeping for a deployed stack."""

    path_length: float          # m, sum of all gaps
    propagation_seconds: float  # path_length / c
    frame_seconds: float        # 1 / frame_rate
    total_seconds: float        # propagation + one frame interval
    frame_rate: float


def optical_metrics(geometry: SystemGeometry, frame_rate: float) -> OpticalMetrics:
    """Time for one inference: light transit plus one source frame."""
    if not (frame_rate > 0.0) or not math.isfinite(frame_rate):
        raise ValueError(f"frame rate must be finite and > 0, got {frame_rate!r}")
    path = float(sum(geometry.distances))
    prop = path / SPEED_OF_LIGHT
    frame = 1.0 / frame_rate
    return OpticalMetrics(path_length=path, propagation_seconds=prop,
                          frame_seconds=frame, total_seconds=prop + frame,
                          frame_rate=frame_rate)
