"""Kernel selection: the compiled core when it imports, else pure Python.

Set RESUSIM_PURE=1 to force the fallback.
"""

import os

if os.environ.get("RESUSIM_PURE"):
    from ._purecore import advance_patient, mw_null_counts

    BACKEND = "python"
else:
    try:
        from ._fastcore import advance_patient, mw_null_counts

        BACKEND = "cython"
    except ImportError:
        from ._purecore import advance_patient, mw_null_counts

        BACKEND = "python"

__all__ = ["advance_patient", "mw_null_counts", "BACKEND"]
