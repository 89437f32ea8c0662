"""Build script for the optional compiled SVM sweep kernel.

The package is fully functional without the extension (a pure-numpy
fallback is selected at import time); the compiled kernel is what makes
large sweep configurations fast. Floating-point contraction is disabled
so the compiled kernel and the Python fallback round identically.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

ext_modules = []
if cythonize is not None:
    ext_modules = cythonize(
        [
            Extension(
                "fedsvm.svm._smo",
                ["src/fedsvm/svm/_smo.pyx"],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        language_level=3,
    )

setup(ext_modules=ext_modules)
