import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "tensched._recurrent_cy",
                ["src/tensched/_recurrent_cy.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # Pure-python/numpy fallback is selected at import time if the
    # extension is unavailable.
    ext_modules = []

setup(ext_modules=ext_modules)
