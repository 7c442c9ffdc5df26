"""Build script for the optional compiled kernel core.

The package is fully functional without the extension (a numpy fallback is
selected at import time); building it just makes the hot per-pixel kernels
faster. `pip install -e . --no-build-isolation` compiles it when Cython and
a C toolchain are present.
"""

import numpy
from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "histosim.kernels._native",
                ["src/histosim/kernels/_native.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
        },
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
