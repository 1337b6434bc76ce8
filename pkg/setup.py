import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

ext_modules = cythonize(
    [
        Extension(
            "oqmla._kernels",
            ["src/oqmla/_kernels.pyx"],
            include_dirs=[np.get_include()],
            extra_compile_args=["-O3", "-fcx-limited-range"],
        )
    ],
    language_level="3",
)

setup(ext_modules=ext_modules)
