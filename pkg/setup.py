import os
import sys

import numpy as np
from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("GRIDCASCADE_NO_EXT"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        sys.stderr.write("Cython not available; installing pure-Python kernels only\n")
    else:
        ext_modules = cythonize(
            [Extension("gridcascade._kernels", ["src/gridcascade/_kernels.pyx"],
                       include_dirs=[np.get_include()], extra_compile_args=["-O3"])],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
