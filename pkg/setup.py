import numpy
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    # -ffp-contract=off keeps the compiled kernel bit-identical to the
    # pure-Python fallback (no FMA fusion of a*b+c).
    extensions = cythonize(
        [
            Extension(
                "foodchain._kernel",
                ["src/foodchain/_kernel.pyx"],
                include_dirs=[numpy.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    extensions = []

setup(ext_modules=extensions)
