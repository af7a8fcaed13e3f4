import os

from setuptools import Extension, setup

ext_modules = []
if os.environ.get("CATLAB_SKIP_EXT") != "1":
    try:
        from Cython.Build import cythonize

        ext_modules = cythonize(
            [
                Extension(
                    "catlab._core",
                    sources=["src/catlab/_core.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={
                "language_level": "3",
                "boundscheck": False,
                "wraparound": False,
                "cdivision": True,
            },
        )
    except ImportError:
        # No Cython: the package falls back to the numpy kernels at import.
        ext_modules = []

setup(ext_modules=ext_modules)
