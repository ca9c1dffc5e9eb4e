"""Selects the simulation kernel at import time.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``AOCE_PURE_PYTHON=1`` is set, the pure-Python kernel is
used. ``BACKEND`` names the active one.
"""

from __future__ import annotations

import os

from . import _simkernel_py

if os.environ.get("AOCE_PURE_PYTHON") == "1":
    _impl = _simkernel_py
    BACKEND = "python"
else:
    try:
        from . import _simkernel as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        _impl = _simkernel_py
        BACKEND = "python"

run_chunk = _impl.run_chunk
python_run_chunk = _simkernel_py.run_chunk

KIND_TABLE = _simkernel_py.KIND_TABLE
KIND_RANDOMIZED = _simkernel_py.KIND_RANDOMIZED
KIND_PERIODIC = _simkernel_py.KIND_PERIODIC
KIND_REACTIVE = _simkernel_py.KIND_REACTIVE
KIND_AOI = _simkernel_py.KIND_AOI
KIND_AOII = _simkernel_py.KIND_AOII


def compiled_run_chunk():
    """The compiled kernel, or None when the extension is not built."""
    try:
        from . import _simkernel  # type: ignore[attr-defined]
    except ImportError:
        return None
    return _simkernel.run_chunk
