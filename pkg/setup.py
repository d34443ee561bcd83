"""Build script: compiles the optional Cython kernel core.

The package is fully functional without the extension (hdlo._lie_py is the
fallback selected at import time), so a failed compile downgrades to a
pure-Python install instead of aborting.
"""

from setuptools import setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        ["src/hdlo/_lie_cy.pyx"],
        compiler_directives={"language_level": "3"},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"hdlo: skipping Cython core ({exc}); using pure-Python kernels")

setup(ext_modules=ext_modules)
