import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:  # pure-Python install; kernel falls back at import time
    cythonize = None

ext_modules = []
if cythonize is not None and not os.environ.get("CROSSROUTER_NO_EXT"):
    ext_modules = cythonize(
        [
            Extension(
                "crossrouter._kernel",
                ["src/crossrouter/_kernel.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3", "-ffp-contract=off"],
            )
        ],
        compiler_directives={"language_level": "3"},
    )

setup(ext_modules=ext_modules)
