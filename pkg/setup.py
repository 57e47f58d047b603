"""Build script: compiles the optional Cython kernel extension.

The package works without the extension (a pure-numpy fallback is selected at
import time), so any failure here downgrades to a source-only install instead
of aborting.
"""
import sys

from setuptools import Extension, setup


def _extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except Exception as exc:  # pragma: no cover - build-environment dependent
        sys.stderr.write(f"cython/numpy unavailable ({exc}); building without compiled kernels\n")
        return []
    ext = Extension(
        "eulerci._kernels_cy",
        ["src/eulerci/_kernels_cy.pyx"],
        include_dirs=[numpy.get_include()],
        extra_compile_args=["-O3"],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
    )
    try:
        return cythonize([ext], language_level=3)
    except Exception as exc:  # pragma: no cover
        sys.stderr.write(f"cythonize failed ({exc}); building without compiled kernels\n")
        return []


setup(ext_modules=_extensions())
