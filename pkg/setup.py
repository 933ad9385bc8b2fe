"""Builds the optional compiled kernel; the package works without it."""

from setuptools import setup

ext_modules = []
try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [Extension(
            "constrained_sampling.fast._ckernel",
            ["src/constrained_sampling/fast/_ckernel.pyx"],
            include_dirs=[numpy.get_include()],
            # keep IEEE semantics so results match the pure-Python kernel bit for bit
            extra_compile_args=["-O2", "-ffp-contract=off", "-fno-fast-math"],
            define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        )],
        compiler_directives={"language_level": 3},
    )
except ImportError:
    pass

setup(ext_modules=ext_modules)
