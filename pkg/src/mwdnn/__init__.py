"""Multi-wavelength diffractive network simulator and trainer.

Per-wavelength scalar fields propagate through a stack of shared
phase-only surfaces to a segmented detector; the phase maps are trained
by gradient descent against classification targets, one task per
wavelength channel.
"""

from ._kernels import backend as kernel_backend
from .autodiff import adjoint_propagate, finite_diff_check, run_backward, run_forward
from .config import ConfigError, RunConfig
from .data import LabeledImageSet, load_image_set, preprocess, synthetic_blobs
from .hardware import optical_metrics, solve_doe_heights
from .optics import (
    ComplexField,
    GridSpec,
    PhaseStack,
    SystemGeometry,
    apply_phase,
    build_grid,
    build_kernels,
    forward,
    layer_spacing,
    propagate,
    propagation_kernel,
    total_intensity,
)
from .readout import DetectorLayout, FilterMode, build_layout, classify, energy_distribution, pool
from .training import TrainConfig, evaluate, train

__version__ = "0.1.0"
