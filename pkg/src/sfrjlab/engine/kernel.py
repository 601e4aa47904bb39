"""Select the solver kernel: compiled extension if importable, else numpy.

Set ``SFRJLAB_KERNEL=python`` to force the numpy kernel.
"""
from __future__ import annotations

import os

from . import _kernel_py

try:
    from . import _kernel as _kernel_c
except ImportError:  # extension not built
    _kernel_c = None


def available() -> list[str]:
    return ["python"] + (["cython"] if _kernel_c is not None else [])


def get(name: str | None = None):
    """Return the kernel module called ``name`` ("cython", "python", or auto)."""
    name = name or os.environ.get("SFRJLAB_KERNEL", "auto")
    if name == "python":
        return _kernel_py
    if name in ("cython", "auto"):
        if _kernel_c is not None:
            return _kernel_c
        if name == "cython":
            raise ImportError("compiled kernel not built; reinstall with Cython available")
        return _kernel_py
    raise ValueError(f"unknown kernel {name!r}")


def backend_name(mod=None) -> str:
    mod = mod or get()
    return "cython" if mod is _kernel_c and mod is not None else "python"
