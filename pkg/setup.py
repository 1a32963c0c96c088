import numpy as np
from setuptools import Extension, setup

try:
    from Cython.Build import cythonize
except ImportError:
    cythonize = None

extensions = []
if cythonize is not None:
    extensions = cythonize(
        [
            Extension(
                "plab._core",
                ["src/plab/_core.pyx"],
                include_dirs=[np.get_include()],
                extra_compile_args=["-O3"],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        compiler_directives={"language_level": "3"},
    )
    # keep the install usable on toolchain-less hosts; plab.kernels falls
    # back to the pure-numpy implementations when the module is missing
    for ext in extensions:
        ext.optional = True

setup(ext_modules=extensions)
