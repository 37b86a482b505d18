"""Build script for the optional compiled kernel extension.

The package works without the extension (a pure-numpy fallback is selected
at import time), so a missing compiler or Cython only costs speed.
"""

import sys

from setuptools import Extension, setup
from setuptools.command.build_ext import build_ext


class OptionalBuildExt(build_ext):
    """Never fail the install because the extension would not build."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"WARNING: skipping compiled kernels ({exc})", file=sys.stderr)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"WARNING: could not build {ext.name} ({exc})", file=sys.stderr)


def make_extensions():
    try:
        import numpy
        from Cython.Build import cythonize
    except ImportError as exc:
        print(f"WARNING: compiled kernels disabled ({exc})", file=sys.stderr)
        return []
    return cythonize(
        [
            Extension(
                "ppgsleep._ckernels",
                ["src/ppgsleep/_ckernels.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        language_level=3,
    )


setup(ext_modules=make_extensions(), cmdclass={"build_ext": OptionalBuildExt})
