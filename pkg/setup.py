"""Builds the optional Cython kernel extension.

The package works without it (a pure NumPy fallback is selected at import);
build in place with `python setup.py build_ext --inplace` or let pip compile
it during installation.
"""
from setuptools import Extension, setup

ext_modules = []
try:
    import numpy as np
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "convmorph._kernels._conv_cy",
                ["src/convmorph/_kernels/_conv_cy.pyx"],
                include_dirs=[np.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
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
    pass

setup(ext_modules=ext_modules)
