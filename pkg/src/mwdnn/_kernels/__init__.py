"""Kernel backend selection.

Two interchangeable implementations of the hot loops: a compiled Cython
extension and a numpy fallback. The compiled one is preferred when it
imported cleanly; MWDNN_KERNELS=numpy|cython forces a choice. The two
agree to float rounding but not bitwise (libm vs vectorized sin/cos), so
reproducibility guarantees hold per backend.
"""

import os

from . import numpy_ops

_choice = os.environ.get("MWDNN_KERNELS", "auto").lower()
if _choice not in ("auto", "cython", "numpy"):
    raise ValueError(
        f"MWDNN_KERNELS must be auto, cython or numpy, got {_choice!r}"
    )

ops = numpy_ops
backend = "numpy"
if _choice in ("auto", "cython"):
    try:
        from . import cyops

        ops = cyops
        backend = "cython"
    except ImportError:
        if _choice == "cython":
            raise ImportError(
                "MWDNN_KERNELS=cython but the compiled extension is not "
                "available; reinstall with a C compiler or unset the variable"
            ) from None


def available_backends():
    """Importable backend modules keyed by name (for parity tests)."""
    found = {"numpy": numpy_ops}
    try:
        from . import cyops as _c

        found["cython"] = _c
    except ImportError:
        pass
    return found
