"""Build script for the optional compiled sampling kernel.

The package works without the extension (a NumPy fallback is selected at
import time), so failures here are non-fatal: install with
``TSCLAB_SKIP_EXT=1 pip install -e . --no-build-isolation`` to skip
compilation entirely.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("TSCLAB_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "tsclab._kernels._fastcore",
                    sources=["src/tsclab/_kernels/_fastcore.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
