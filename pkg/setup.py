import os

import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

PYX = "src/conav/kernels/_speedups.pyx"

extensions = [
    Extension(
        "conav.kernels._speedups",
        [PYX],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
    )
]

build_ext = cythonize is not None and os.path.exists(PYX)

setup(
    ext_modules=cythonize(extensions, language_level=3) if build_ext else [],
)
