"""Backend selection for the particle kernels.

The compiled extension ``oqmla._kernels`` is used when it was built; otherwise
the numpy implementation in ``oqmla._kernels_py`` is loaded.  Setting
``OQMLA_PURE_PYTHON=1`` forces the numpy backend.
"""

import importlib
import os

COND_LIMIT = 1e8


def load_backend(name: str | None = None):
    """Return the kernel module for ``name`` ("cython", "python" or None for auto)."""
    if name == "python":
        return importlib.import_module("oqmla._kernels_py")
    if name == "cython":
        return importlib.import_module("oqmla._kernels")
    if name is not None:
        raise ValueError(f"unknown kernel backend {name!r}")
    if os.environ.get("OQMLA_PURE_PYTHON", "") not in ("", "0"):
        return load_backend("python")
    try:
        return load_backend("cython")
    except ImportError:
        return load_backend("python")


backend = load_backend()
BACKEND = "cython" if backend.__name__.endswith("._kernels") else "python"
