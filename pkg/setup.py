"""Build script: compiles the optional fast kernel extension.

The package works without the extension (a NumPy fallback is selected at
import time), so any failure here downgrades to a pure-Python install
instead of aborting.
"""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "flowcast.kernels._fastcore",
                sources=["src/flowcast/kernels/_fastcore.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": 3},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"flowcast: skipping compiled kernels ({exc}); NumPy fallback will be used")

setup(ext_modules=ext_modules)
