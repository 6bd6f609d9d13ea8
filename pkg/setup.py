"""Build hook for the optional compiled modules.

Two kinds of extension are built when Cython is available:
- resusim._fastcore, the hand-written kernels in _fastcore.pyx;
- the simulation modules themselves, compiled unchanged from their .py
  sources. Python prefers an extension over a .py of the same name.

Without Cython (or with RESUSIM_NO_EXT set) the package installs as pure
Python. RESUSIM_PURE=1 at run time ignores every extension.
"""

import os

from setuptools import setup

COMPILED_MODULES = ("domain", "als", "comms", "agents", "engine")

ext_modules = []
if not os.environ.get("RESUSIM_NO_EXT"):
    try:
        from Cython.Build import cythonize
        from setuptools import Extension

        # No fused multiply-add, so compiled arithmetic rounds exactly like
        # Python's and event logs stay byte-identical across builds.
        flags = ["-O2", "-ffp-contract=off"]
        exts = [Extension("resusim._fastcore", ["src/resusim/_fastcore.pyx"], extra_compile_args=flags)]
        exts += [
            Extension(f"resusim.{m}", [f"src/resusim/{m}.py"], extra_compile_args=flags)
            for m in COMPILED_MODULES
        ]
        ext_modules = cythonize(exts, language_level=3, quiet=True)
    except ImportError:
        ext_modules = []

setup(ext_modules=ext_modules)
