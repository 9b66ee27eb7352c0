import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [
            Extension(
                "kooplift._core",
                ["src/kooplift/_core.pyx"],
                include_dirs=[np.get_include()],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
except ImportError:
    # Without Cython the package installs pure Python; the interpreter
    # fallback in kooplift._backend takes over at import time.
    ext_modules = []

setup(ext_modules=ext_modules)
