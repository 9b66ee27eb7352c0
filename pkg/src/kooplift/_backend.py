"""Selects the program-evaluation backend at import time.

The compiled Cython kernel is preferred; the numpy interpreter is the
fallback.  Set KOOPLIFT_PURE_PYTHON=1 to force the fallback (useful for
debugging and for benchmarking one against the other).
"""

from __future__ import annotations

import os

if os.environ.get("KOOPLIFT_PURE_PYTHON") == "1":
    from . import _core_py as impl

    backend_name = "python"
else:
    try:
        from . import _core as impl  # type: ignore[attr-defined]

        backend_name = "compiled"
    except ImportError:
        from . import _core_py as impl

        backend_name = "python"
