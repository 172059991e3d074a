"""Backend selection for the radial Newton kernel.

The compiled extension is used when it imports; otherwise the numpy
fallback.  Set ``FASTDIFF_BACKEND=python`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("FASTDIFF_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py


def get_backend(name=None):
    """Return the kernel module ``name`` ("cython" or "python"), default active."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "cython":
        from . import _kernels

        return _kernels
    raise ValueError(f"unknown backend {name!r}")


newton_solve = _impl.newton_solve
tridiag_update = _impl.tridiag_update
