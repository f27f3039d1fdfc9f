"""Build script for the optional compiled kernel extension.

The package is fully functional without the extension (a NumPy fallback is
selected at import time); compiling it just makes the hot loops faster.
"""

from setuptools import setup
from setuptools.extension import Extension

extensions = []
try:
    from Cython.Build import cythonize

    extensions = cythonize(
        [
            Extension(
                "clsh._kernels_cy",
                ["src/clsh/_kernels_cy.pyx"],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # No Cython available: install with the pure-Python kernels only.
    extensions = []

setup(ext_modules=extensions)
