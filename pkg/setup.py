"""Build script: compiles the optional VM interpreter extension.

The package is fully functional without the extension; blegate.vm falls
back to the pure-Python interpreter when the compiled core is missing.
"""

from setuptools import Extension, setup

ext_modules = []
try:
    from Cython.Build import cythonize

    ext_modules = cythonize(
        [Extension("blegate._vmcore", ["src/blegate/_vmcore.pyx"])],
        language_level=3,
        compiler_directives={"boundscheck": False, "wraparound": False},
    )
except Exception as exc:  # pragma: no cover - build-environment dependent
    print(f"warning: building without compiled VM core ({exc})")

setup(ext_modules=ext_modules)
