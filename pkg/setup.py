"""Build hook for the optional compiled kernel extension.

The package is pure Python plus one Cython extension with the hot loops.
If the extension cannot be built (no compiler, no Cython) the install still
succeeds and the numpy fallback in mwdnn._kernels is used at runtime.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("MWDNN_NO_EXT") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "mwdnn._kernels.cyops",
                    ["src/mwdnn/_kernels/cyops.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": 3},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
