"""Build the optional compiled quantile-regression core.

The package works without the extension (a numpy fallback is selected at
import time), so build failures here should not block installation.
"""

import numpy
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "quantbreak._qr_core",
        sources=["src/quantbreak/_qr_core.pyx"],
        include_dirs=[numpy.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

setup(ext_modules=cythonize(extensions, language_level=3))
