# Builds the optional compiled covariance backend.  The package works without
# it (pure-numpy fallback selected at import), so a failed extension build is
# downgraded to a warning instead of aborting the install.
import warnings

from setuptools import setup

try:
    import numpy
    from Cython.Build import cythonize
    from setuptools import Extension

    ext_modules = cythonize(
        [
            Extension(
                "edgebo._covcy",
                ["src/edgebo/_covcy.pyx"],
                include_dirs=[numpy.get_include()],
                define_macros=[("NPY_NO_DEPRECATED_API", "NPY_1_7_API_VERSION")],
            )
        ],
        language_level=3,
    )
except Exception as exc:  # pragma: no cover - depends on build env
    warnings.warn(f"compiled backend disabled ({exc}); using pure-numpy fallback")
    ext_modules = []

setup(ext_modules=ext_modules)
