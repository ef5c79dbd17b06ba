import os

import numpy as np
from setuptools import setup

ext_modules = []
if not os.environ.get("RFEDIT_NO_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "rfedit._kernels",
                    ["src/rfedit/_kernels.pyx"],
                    include_dirs=[np.get_include()],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )
    except ImportError:
        # pure-Python kernels are picked up at import time
        ext_modules = []

setup(ext_modules=ext_modules)
