"""Build script: compiles the optional fast-kernel extension when Cython and a
C compiler are available, otherwise installs the pure-numpy package unchanged."""

from setuptools import setup
from setuptools.command.build_ext import build_ext


class optional_build_ext(build_ext):
    """Never fail the install because the extension could not be built."""

    def run(self):
        try:
            super().run()
        except Exception as exc:  # compiler missing, etc.
            print(f"warning: skipping compiled kernels ({exc}); "
                  "the numpy fallback will be used")

    def build_extension(self, ext):
        try:
            super().build_extension(ext)
        except Exception as exc:
            print(f"warning: could not build {ext.name} ({exc}); "
                  "the numpy fallback will be used")


def _extensions():
    try:
        from Cython.Build import cythonize
    except ImportError:
        return []
    from setuptools import Extension
    return cythonize(
        [Extension("ecgalign.kernels._compiled",
                   ["src/ecgalign/kernels/_compiled.pyx"],
                   extra_compile_args=["-O3"])],
        language_level=3,
        compiler_directives={"boundscheck": False, "wraparound": False,
                             "cdivision": True},
    )


setup(
    ext_modules=_extensions(),
    cmdclass={"build_ext": optional_build_ext},
)
