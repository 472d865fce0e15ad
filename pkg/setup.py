"""Build script for the optional compiled training kernels.

`pip install -e . --no-build-isolation` compiles fedsim.kernels._speedups
with Cython.  Set FEDSIM_PURE_PYTHON=1 to skip the extension entirely; the
package then runs on the numpy fallback kernels.
"""

import os

from setuptools import Extension, setup

ext_modules = []
if not os.environ.get("FEDSIM_PURE_PYTHON"):
    try:
        from Cython.Build import cythonize
    except ImportError:
        cythonize = None
    if cythonize is not None:
        ext_modules = cythonize(
            [
                Extension(
                    "fedsim.kernels._speedups",
                    ["src/fedsim/kernels/_speedups.pyx"],
                    extra_compile_args=["-O3"],
                )
            ],
            compiler_directives={"language_level": "3"},
        )

setup(ext_modules=ext_modules)
