"""Build the optional compiled kernels.

If Cython or a C compiler is unavailable the package still installs and the
pure-numpy fallback is used at import time.
"""
import os
import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    def run(self):
        try:
            super().run()
        except Exception as exc:  # pragma: no cover - depends on toolchain
            print(f"warning: compiled kernels not built ({exc}); using numpy fallback",
                  file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:  # pragma: no cover
            print(f"warning: failed to build {ext.name} ({exc})", file=sys.stderr)


def extensions():
    try:
        import numpy as np
        from Cython.Build import cythonize
    except ImportError:
        return []
    openmp = os.environ.get("KINQSD_OPENMP", "1") == "1"
    ext = Extension(
        "kinqsd._ckernels",
        ["src/kinqsd/_ckernels.pyx"],
        include_dirs=[np.get_include()],
        extra_compile_args=["-O3", "-fno-math-errno"] + (["-fopenmp"] if openmp else []),
        extra_link_args=["-fopenmp"] if openmp else [],
    )
    return cythonize([ext], compiler_directives={"language_level": "3"})


setup(ext_modules=extensions(), cmdclass={"build_ext": OptionalBuildExt})
