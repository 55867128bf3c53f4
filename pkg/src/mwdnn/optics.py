"""Scalar free-space propagation and phase-only diffractive surfaces.

Fields are sampled on a square grid of ``side`` elements with pitch
``pitch`` (meters). Propagation between planes uses the angular-spectrum
transfer function

    H(fx, fy) = exp(i 2 pi z sqrt(1/lambda^2 - fx^2 - fy^2))

restricted to the propagating band ``1/lambda^2 >= fx^2 + fy^2``;
evanescent components are dropped. To keep the circular convolution of
the FFT from wrapping energy across the aperture, fields are zero-padded
to ``pad_factor * side`` per edge (centered) before each hop and cropped
back afterwards.

Wavelength channels never mix in free space or in a phase surface; a
multi-wavelength system is a set of independent scalar fields sharing
the same phase maps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as _fft

from ._kernels import ops

__all__ = [
    "GridSpec",
    "ComplexField",
    "PropagationKernel",
    "PhaseStack",
    "SystemGeometry",
    "build_grid",
    "layer_spacing",
    "propagation_kernel",
    "build_kernels",
    "propagate",
    "apply_phase",
    "forward",
    "total_intensity",
]


@dataclass(frozen=True)
class GridSpec:
    """Square sampling raster: element count per side, pitch, pad factor."""

    side: int
    pitch: float
    pad_factor: int = 2

    def __post_init__(self):
        if not isinstance(self.side, int) or self.side < 2:
            raise ValueError(f"grid side must be an int >= 2, got {self.side!r}")
        if not (self.pitch > 0.0) or not math.isfinite(self.pitch):
            raise ValueError(f"element pitch must be finite and > 0, got {self.pitch!r}")
        if not isinstance(self.pad_factor, int) or self.pad_factor < 1:
            raise ValueError(f"pad factor must be an int >= 1, got {self.pad_factor!r}")

    @property
    def padded_side(self) -> int:
        return self.pad_factor * self.side

    @property
    def aperture(self) -> float:
        """Physical side length of the working window (meters)."""
        return self.side * self.pitch


def build_grid(side: int, pitch: float, pad_factor: int = 2) -> GridSpec:
    """Validated constructor for :class:`GridSpec`."""
    return GridSpec(side=side, pitch=pitch, pad_factor=pad_factor)


@dataclass
class ComplexField:
    """One monochromatic scalar field sampled on a grid.

    ``amplitudes`` is complex128 with shape (side, side) for a working
    field or (padded_side, padded_side) for a field still on the padded
    raster.
    """

    amplitudes: np.ndarray
    wavelength: float
    grid: GridSpec

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        k, g = self.grid.side, self.grid.padded_side
        if self.amplitudes.shape not in ((k, k), (g, g)):
            raise ValueError(
                f"field shape {self.amplitudes.shape} matches neither the working "
                f"raster ({k}, {k}) nor the padded raster ({g}, {g})"
            )
        if not (self.wavelength > 0.0) or not math.isfinite(self.wavelength):
            raise ValueError(f"wavelength must be finite and > 0, got {self.wavelength!r}")
        if not np.all(np.isfinite(self.amplitudes.view(np.float64))):
            raise ValueError("field contains non-finite samples")

    @property
    def is_padded(self) -> bool:
        g = self.grid.padded_side
        return self.amplitudes.shape == (g, g) and g != self.grid.side

    def intensity(self) -> np.ndarray:
        return ops.intensity(self.amplitudes[None])[0]

    def power(self) -> float:
        return float(ops.intensity(self.amplitudes[None]).sum())


@dataclass(frozen=True)
class PropagationKernel:
    """Precomputed spectral factors for one (wavelength, distance) hop."""

    factors: np.ndarray  # (padded_side, padded_side) complex128
    wavelength: float
    distance: float
    grid: GridSpec


@dataclass
class PhaseStack:
    """Trainable phase maps, one (side, side) float64 layer per surface.

    Values are unconstrained reals; physically only the value mod 2 pi
    matters and :meth:`wrapped` reduces to [0, 2 pi).
    """

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 3 or self.values.shape[1] != self.values.shape[2]:
            raise ValueError(
                f"phase stack must be (layers, side, side), got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("phase stack contains non-finite values")

    @property
    def layer_count(self) -> int:
        return self.values.shape[0]

    @property
    def side(self) -> int:
        return self.values.shape[1]

    def wrapped(self) -> np.ndarray:
        return np.mod(self.values, 2.0 * np.pi)


def layer_spacing(grid: GridSpec, wavelength: float) -> float:
    """Plane separation that lets the full aperture exchange light.

    The largest diffraction half-angle the raster supports is
    ``asin(wavelength / (2 * pitch))``; the spacing is the distance at
    which a cone with that half-angle opened at one edge of the aperture
    reaches the opposite edge:

        d = side * pitch / (2 * tan(asin(wavelength / (2 * pitch))))

    Shorter wavelengths diffract less, so for a multi-wavelength system
    the caller passes the shortest wavelength and the same spacing then
    suffices for all longer ones.
    """
    if not (wavelength > 0.0) or not math.isfinite(wavelength):
        raise ValueError(f"wavelength must be finite and > 0, got {wavelength!r}")
    if wavelength >= 2.0 * grid.pitch:
        raise ValueError(
            f"wavelength {wavelength:g} m is not resolvable on pitch {grid.pitch:g} m "
            "(need wavelength < 2 * pitch)"
        )
    half_angle = math.asin(wavelength / (2.0 * grid.pitch))
    return grid.aperture / (2.0 * math.tan(half_angle))


@dataclass(frozen=True)
class SystemGeometry:
    """Stack layout: wavelength channels, raster, surface count, gaps.

    ``distances`` has one entry per gap: input plane -> surface 1,
    between successive surfaces, and last surface -> detector plane
    (``layer_count + 1`` values).
    """

    wavelengths: tuple
    grid: GridSpec
    layer_count: int
    distances: tuple

    def __post_init__(self):
        object.__setattr__(self, "wavelengths", tuple(float(w) for w in self.wavelengths))
        object.__setattr__(self, "distances", tuple(float(d) for d in self.distances))
        if len(self.wavelengths) == 0:
            raise ValueError("at least one wavelength channel is required")
        for w in self.wavelengths:
            if not (0.0 < w < 2.0 * self.grid.pitch) or not math.isfinite(w):
                raise ValueError(
                    f"wavelength {w!r} must lie in (0, 2 * pitch) = (0, {2 * self.grid.pitch:g})"
                )
        if len(set(self.wavelengths)) != len(self.wavelengths):
            raise ValueError("wavelengths must be distinct")
        if self.layer_count < 1:
            raise ValueError(f"need at least one surface, got {self.layer_count}")
        if len(self.distances) != self.layer_count + 1:
            raise ValueError(
                f"expected {self.layer_count + 1} gap distances for "
                f"{self.layer_count} surfaces, got {len(self.distances)}"
            )
        for d in self.distances:
            if d < 0.0 or not math.isfinite(d):
                raise ValueError(f"gap distance must be finite and >= 0, got {d!r}")

    @classmethod
    def with_uniform_spacing(cls, wavelengths, grid: GridSpec, layer_count: int) -> "SystemGeometry":
        """All gaps set to layer_spacing() of the shortest wavelength."""
        wl = tuple(float(w) for w in wavelengths)
        if not wl:
            raise ValueError("at least one wavelength channel is required")
        d = layer_spacing(grid, min(wl))
        return cls(wavelengths=wl, grid=grid, layer_count=layer_count,
                   distances=(d,) * (layer_count + 1))


def propagation_kernel(grid: GridSpec, wavelength: float, distance: float) -> PropagationKernel:
    """Angular-spectrum transfer function on the padded raster.

    Returns unit-modulus factors inside the propagating band and exact
    zeros outside it. ``distance`` must be >= 0; at 0 the kernel is a
    pure band-limit projection.
    """
    if not (wavelength > 0.0) or not math.isfinite(wavelength):
        raise ValueError(f"wavelength must be finite and > 0, got {wavelength!r}")
    if distance < 0.0 or not math.isfinite(distance):
        raise ValueError(f"propagation distance must be finite and >= 0, got {distance!r}")
    g = grid.padded_side
    fx = _fft.fftfreq(g, d=grid.pitch)
    f2 = fx * fx
    arg = 1.0 / (wavelength * wavelength) - f2[:, None] - f2[None, :]
    band = arg >= 0.0
    kz = np.sqrt(np.where(band, arg, 0.0))
    factors = np.where(band, np.exp((2j * np.pi * distance) * kz), 0.0 + 0.0j)
    return PropagationKernel(factors=factors, wavelength=wavelength,
                             distance=distance, grid=grid)


def build_kernels(geometry: SystemGeometry):
    """Per-channel, per-gap kernels: kernels[c][l] covers gap l of channel c."""
    return [
        [propagation_kernel(geometry.grid, w, d) for d in geometry.distances]
        for w in geometry.wavelengths
    ]


def _pad_batch(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    g, k = grid.padded_side, grid.side
    if g == k:
        return u.copy()
    off = (g - k) // 2
    buf = np.zeros((u.shape[0], g, g), dtype=np.complex128)
    buf[:, off:off + k, off:off + k] = u
    return buf


def _crop_batch(buf: np.ndarray, grid: GridSpec) -> np.ndarray:
    g, k = grid.padded_side, grid.side
    if g == k:
        return buf
    off = (g - k) // 2
    return np.ascontiguousarray(buf[:, off:off + k, off:off + k])


def _propagate_batch(u: np.ndarray, kernel: PropagationKernel, *, conjugate: bool = False,
                     workers: int = 1) -> np.ndarray:
    """(B, side, side) -> (B, side, side) through the padded raster.

    With conjugate=True the conjugated spectral factors are applied,
    which is exactly the adjoint of the forward hop (pad and crop are
    mutual adjoints, the FFT normalizations cancel).
    """
    buf = _pad_batch(u, kernel.grid)
    spec = _fft.fft2(buf, axes=(-2, -1), overwrite_x=True, workers=workers)
    factors = np.conj(kernel.factors) if conjugate else kernel.factors
    ops.spectral_scale(spec, factors)
    out = _fft.ifft2(spec, axes=(-2, -1), overwrite_x=True, workers=workers)
    return _crop_batch(out, kernel.grid)


def _hop_single(field: ComplexField, kernel: PropagationKernel, *,
                conjugate: bool, keep_padded: bool) -> ComplexField:
    if kernel.grid != field.grid:
        raise ValueError("kernel and field were built for different grids")
    if kernel.wavelength != field.wavelength:
        raise ValueError(
            f"kernel wavelength {kernel.wavelength:g} does not match field "
            f"wavelength {field.wavelength:g}"
        )
    grid = field.grid
    g = grid.padded_side
    if field.amplitudes.shape == (g, g):
        buf = field.amplitudes.astype(np.complex128, copy=True)[None]
    else:
        buf = _pad_batch(field.amplitudes[None], grid)
    spec = _fft.fft2(buf, axes=(-2, -1), overwrite_x=True)
    factors = np.conj(kernel.factors) if conjugate else kernel.factors
    ops.spectral_scale(spec, np.ascontiguousarray(factors))
    out = _fft.ifft2(spec, axes=(-2, -1), overwrite_x=True)
    amps = out[0] if keep_padded else _crop_batch(out, grid)[0]
    return ComplexField(amplitudes=amps, wavelength=field.wavelength, grid=grid)


def propagate(field: ComplexField, kernel: PropagationKernel, *,
              keep_padded: bool = False) -> ComplexField:
    """Advance one field through one gap.

    The field may be on the working or the padded raster; the result is
    cropped back to the working raster unless ``keep_padded`` is set.
    """
    return _hop_single(field, kernel, conjugate=False, keep_padded=keep_padded)


def apply_phase(field: ComplexField, layer: np.ndarray) -> ComplexField:
    """Multiply by exp(i * layer). Phase surfaces act on the working window;
    a padded field is modulated on its central window only."""
    layer = np.asarray(layer, dtype=np.float64)
    k = field.grid.side
    if layer.shape != (k, k):
        raise ValueError(f"phase layer shape {layer.shape} != ({k}, {k})")
    mod = ops.phase_modulator(layer)
    amps = field.amplitudes
    if field.is_padded:
        out = amps.astype(np.complex128, copy=True)
        off = (field.grid.padded_side - k) // 2
        win = np.ascontiguousarray(out[off:off + k, off:off + k])
        out[off:off + k, off:off + k] = ops.apply_modulator(win[None], mod)[0]
    else:
        out = ops.apply_modulator(np.ascontiguousarray(amps)[None], mod)[0]
    return ComplexField(amplitudes=out, wavelength=field.wavelength, grid=field.grid)


def forward(input_fields, phases: PhaseStack, geometry: SystemGeometry, kernels=None):
    """Run every channel through the shared surface stack.

    Parameters
    ----------
    input_fields : sequence of ComplexField
        One working-raster field per geometry wavelength, same order.
    phases : PhaseStack
        Shared across channels; layer count must match the geometry.
    kernels : optional output of build_kernels(geometry) to reuse.

    Returns
    -------
    (output_fields, intensity_maps) : lists over channels. Intensity maps
    are (side, side) float64 at the detector plane.
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
    if len(input_fields) != len(geometry.wavelengths):
        raise ValueError(
            f"got {len(input_fields)} input fields for "
            f"{len(geometry.wavelengths)} wavelength channels"
        )
    for f, w in zip(input_fields, geometry.wavelengths):
        if f.wavelength != w:
            raise ValueError(
                f"input field wavelength {f.wavelength:g} does not match "
                f"geometry channel {w:g}"
            )
        if f.grid != geometry.grid:
            raise ValueError("input field grid does not match geometry grid")
        if f.is_padded:
            raise ValueError("forward() expects working-raster input fields")
    if kernels is None:
        kernels = build_kernels(geometry)
    mods = [ops.phase_modulator(np.ascontiguousarray(phases.values[l]))
            for l in range(phases.layer_count)]
    out_fields = []
    intensities = []
    for c, f in enumerate(input_fields):
        u = np.ascontiguousarray(f.amplitudes, dtype=np.complex128)[None]
        for l in range(phases.layer_count):
            u = _propagate_batch(u, kernels[c][l])
            u = ops.apply_modulator(u, mods[l])
        u = _propagate_batch(u, kernels[c][phases.layer_count])
        out = ComplexField(amplitudes=u[0], wavelength=f.wavelength, grid=geometry.grid)
        out_fields.append(out)
        intensities.append(ops.intensity(u)[0])
    return out_fields, intensities


def total_intensity(intensity_maps) -> np.ndarray:
    """Incoherent sum across channels (distinct wavelengths never interfere)."""
    maps = list(intensity_maps)
    if not maps:
        raise ValueError("no intensity maps given")
    out = np.array(maps[0], dtype=np.float64, copy=True)
    for m in maps[1:]:
        if m.shape != out.shape:
            raise ValueError("intensity maps differ in shape")
        out += m
    return out
