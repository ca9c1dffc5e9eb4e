"""Builds the optional compiled simulation kernel.

Without Cython the package installs with the pure-Python kernel only.
"""

from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    ext_modules = []
else:
    ext_modules = cythonize(
        [
            Extension(
                "aoce._simkernel",
                ["src/aoce/_simkernel.pyx"],
                # no fast-math: the compiled and pure-Python kernels must agree bit for bit
                extra_compile_args=["-O2"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
