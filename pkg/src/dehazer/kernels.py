"""Selects the gather/scatter kernel backend at import time.

The compiled extension is preferred when present; the pure-numpy fallback
is otherwise used transparently. Set ``DEHAZER_KERNELS=python`` or
``DEHAZER_KERNELS=compiled`` to force a backend (forcing ``compiled``
raises if the extension was not built). Both backends are bitwise
equivalent; see ``dehazer bench`` for a speed comparison.
"""

import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

_requested = os.environ.get("DEHAZER_KERNELS", "auto").strip().lower()

if _requested in ("auto", ""):
    _impl = _compiled if _compiled is not None else _kernels_py
elif _requested in ("python", "py", "numpy"):
    _impl = _kernels_py
elif _requested in ("compiled", "cython", "c"):
    if _compiled is None:
        raise RuntimeError(
            "DEHAZER_KERNELS=compiled but the extension is not built; "
            "run `python setup.py build_ext --inplace` or reinstall"
        )
    _impl = _compiled
else:
    raise RuntimeError(f"unknown DEHAZER_KERNELS value: {_requested!r}")

BACKEND = "compiled" if _impl is _compiled and _compiled is not None else "python"

gather_patches = _impl.gather_patches
scatter_patches = _impl.scatter_patches


def available_backends() -> dict:
    """Name -> kernel module, for benchmarking and parity tests."""
    found = {"python": _kernels_py}
    if _compiled is not None:
        found["compiled"] = _compiled
    return found
