"""Build script: compiles the hot simulation kernel as a C extension.

The package works without the extension (a pure-NumPy fallback is selected
at import time), but closed-loop scenarios run an order of magnitude faster
with it.  Usage for an in-place build:

    python setup.py build_ext --inplace
"""

import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "hiercoord._kernels._core",
                ["src/hiercoord/_kernels/_core.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
