import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("MOTIONFORGE_SKIP_EXT"):
    from Cython.Build import cythonize

    ext = Extension(
        "motionforge._kernels._native",
        sources=["src/motionforge/_kernels/_native.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
    ext_modules = cythonize([ext], language_level=3)

setup(ext_modules=ext_modules)
