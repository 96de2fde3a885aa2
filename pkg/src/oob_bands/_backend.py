"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is used when the
extension is missing or when OOB_BANDS_BACKEND=python requests it.  Both
backends are bit-compatible, so the choice only affects speed.
"""

import os

from . import _kernels_py

_requested = os.environ.get("OOB_BANDS_BACKEND", "").strip().lower()

if _requested in ("python", "py"):
    kernels = _kernels_py
elif _requested in ("c", "compiled", ""):
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        if _requested:
            raise ImportError(
                "OOB_BANDS_BACKEND=c requested but the compiled kernels "
                "are not built; install with a C compiler or unset it"
            )
        kernels = _kernels_py
else:
    raise ValueError(
        "unknown OOB_BANDS_BACKEND %r (expected 'c' or 'python')" % _requested
    )

BACKEND = kernels.BACKEND


def available_backends():
    """Names of importable kernel backends."""
    names = ["python"]
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        pass
    else:
        names.insert(0, "c")
    return names
