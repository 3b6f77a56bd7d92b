"""Kernel selection.

The compiled extension is used when importable. Setting the environment
variable ``PALMSCORE_BACKEND=python`` forces the numpy fallback.
"""
import os

from . import _gva_py

try:
    from . import _gva_ext
except ImportError:  # extension not built
    _gva_ext = None

KERNELS = {"python": _gva_py.newton_batch}
if _gva_ext is not None:
    KERNELS["compiled"] = _gva_ext.newton_batch

_requested = os.environ.get("PALMSCORE_BACKEND", "").strip().lower()
if _requested and _requested not in ("python", "compiled"):
    raise ImportError(f"unknown PALMSCORE_BACKEND {_requested!r}")
if _requested == "compiled" and _gva_ext is None:
    raise ImportError("PALMSCORE_BACKEND=compiled but palmscore._gva_ext is not built")

BACKEND = _requested or ("compiled" if _gva_ext is not None else "python")


def newton_batch(*args, backend=None, **kwargs):
    return KERNELS[backend or BACKEND](*args, **kwargs)
