"""Build hooks for the optional compiled kernel extension.

The package works without the extension (numpy fallback); building it just
speeds up the hot estimator loops. Set EIGLAB_SKIP_CKERNELS=1 to force a
pure-Python install.
"""

import os

from setuptools import setup

ext_modules = []
if os.environ.get("EIGLAB_SKIP_CKERNELS") != "1":
    try:
        import numpy
        from Cython.Build import cythonize
        from setuptools import Extension

        ext_modules = cythonize(
            [
                Extension(
                    "eiglab.kernels._ckernels",
                    ["src/eiglab/kernels/_ckernels.pyx"],
                    include_dirs=[numpy.get_include()],
                    extra_compile_args=["-O3"],
                    define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
                )
            ],
            language_level=3,
        )
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
