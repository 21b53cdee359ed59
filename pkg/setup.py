"""Build the optional compiled kernels; the package works without them."""
import os

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if os.environ.get("EXCURSION_KIT_NO_EXT", "") not in ("1", "true", "yes"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [Extension("excursion_kit._core", ["src/excursion_kit/_core.pyx"],
                       include_dirs=[np.get_include()], extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3", "boundscheck": False, "wraparound": False,
                                 "cdivision": True, "initializedcheck": False},
        )

setup(ext_modules=ext_modules)
