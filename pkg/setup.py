"""Build the compiled simulation kernel.

Developers::

    pip install -e . --no-build-isolation

The extension is optional: if it fails to build, ``sipkit`` falls back to the
pure-Python event loop at import time.
"""
import numpy as np
from Cython.Build import cythonize
from setuptools import Extension, setup

extensions = [
    Extension(
        "sipkit._kmc_core",
        ["src/sipkit/_kmc_core.pyx"],
        include_dirs=[np.get_include()],
        define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
        extra_compile_args=["-O3"],
        optional=True,
    )
]

setup(
    ext_modules=cythonize(extensions, compiler_directives={"language_level": "3"}),
)
