"""Build script for the optional compiled contraction kernels.

The extension is a pure speed-up: if Cython or a C compiler is missing
(or FTTN_SKIP_EXT is set), the package installs without it and the
numpy fallback is selected at import time.
"""

import os

from setuptools import setup

ext_modules = []
if not os.environ.get("FTTN_SKIP_EXT"):
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "fttn.engine._kernels",
                    ["src/fttn/engine/_kernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
