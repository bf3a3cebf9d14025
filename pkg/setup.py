"""Build script: compiles the optional Cython kernel extension.

If no C compiler is available the build falls back to the pure-Python
kernels selected at import time; the package stays fully functional.
"""

import sys

from setuptools import setup
from setuptools.command.build_ext import build_ext
from setuptools.errors import CCompilerError, ExecError, PlatformError


class optional_build_ext(build_ext):
    """Build the extension if possible, warn and continue otherwise."""

    def run(self):
        try:
            super().run()
        except (CCompilerError, ExecError, PlatformError) as exc:
            self._warn(exc)

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except (CCompilerError, ExecError, PlatformError, ValueError) as exc:
            self._warn(exc)

    @staticmethod
    def _warn(exc):
        print(
            "WARNING: could not build the geotransport._kernels._fast "
            f"extension ({exc}); the pure-Python kernels will be used.",
            file=sys.stderr,
        )


def extensions():
    from Cython.Build import cythonize

    return cythonize(
        ["src/geotransport/_kernels/_fast.pyx"],
        compiler_directives={
            "language_level": 3,
            "boundscheck": False,
            "wraparound": False,
            "cdivision": True,
            "initializedcheck": False,
        },
    )


setup(
    ext_modules=extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
