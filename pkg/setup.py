"""Build script for the optional compiled split-search kernels.

The package works without the extension (a numpy fallback is selected at
import time), so a failing compile only costs speed, not functionality.
"""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Build the extension if possible; fall back to pure python otherwise."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # missing compiler, broken toolchain, ...
            sys.stderr.write(
                "warning: compiled kernels unavailable (%s); "
                "installing with the numpy fallback backend\n" % exc
            )

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            sys.stderr.write(
                "warning: skipping %s (%s); numpy fallback will be used\n"
                % (ext.name, exc)
            )


def extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension

    compile_args = []
    if sys.platform != "win32":
        # -ffp-contract=off keeps float results bit-identical to the
        # numpy fallback (no FMA contraction of a*b+c).
        compile_args = ["-O3", "-ffp-contract=off"]
    return cythonize(
        [
            Extension(
                "oob_bands._kernels",
                ["src/oob_bands/_kernels.pyx"],
                extra_compile_args=compile_args,
            )
        ],
        compiler_directives={"language_level": "3"},
    )


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
