"""Agent-based simulation of team communication during cardiac-arrest resuscitation."""

import os
import sys

__version__ = "0.1.0"

if os.environ.get("RESUSIM_PURE"):
    # Load submodules from source only, skipping any compiled extension.
    from importlib.machinery import BYTECODE_SUFFIXES, SOURCE_SUFFIXES, FileFinder, SourceFileLoader, \
        SourcelessFileLoader

    sys.path_importer_cache[__path__[0]] = FileFinder(
        __path__[0], (SourceFileLoader, SOURCE_SUFFIXES), (SourcelessFileLoader, BYTECODE_SUFFIXES)
    )


def compiled() -> dict:
    """Which modules were loaded from a compiled extension."""
    names = ("_fastcore", "domain", "als", "comms", "agents", "engine")
    return {n: getattr(sys.modules.get(f"{__name__}.{n}"), "__file__", "").endswith((".so", ".pyd"))
            for n in names}
