"""Build script: compiles the optional Cython kernel extension.

The package is fully functional without the extension (a numpy fallback is
selected at import time), so a failed compile downgrades to a warning instead
of aborting the install. Set DEFERSEG_PURE=1 to skip the extension entirely.
"""

import os
import warnings

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """build_ext that degrades to the pure-python package on failure."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            warnings.warn(f"kernel extension build skipped: {exc}")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            warnings.warn(f"kernel extension {ext.name} skipped: {exc}")


ext_modules = []
cmdclass = {}
if os.environ.get("DEFERSEG_PURE") != "1":
    try:
        import numpy
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "deferseg._kernels._cykernels",
                    ["src/deferseg/_kernels/_cykernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
        cmdclass["build_ext"] = optional_build_ext
    except ImportError as exc:
        warnings.warn(f"Cython unavailable, building pure-python package: {exc}")

setup(ext_modules=ext_modules, cmdclass=cmdclass)
