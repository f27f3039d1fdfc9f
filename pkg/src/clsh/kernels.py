"""Kernel backend selection.

Imports the compiled extension when available, otherwise the NumPy
implementation.  Set CLSH_KERNELS=python or CLSH_KERNELS=cython to force a
backend (the bench command uses this to compare them).  Both backends are
bit-exact: digests, distances and counts never depend on which one runs.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _kernels_py

_PUBLIC = (
    "popcount_u64",
    "weight_words",
    "weight_rows",
    "distance_words",
    "distances_to",
    "collide_rows",
    "count_collisions",
    "digest_rows",
    "masked_digest_rows",
)

BACKEND = "python"


def available_backends() -> dict[str, ModuleType]:
    backends = {"python": _kernels_py}
    try:
        from . import _kernels_cy

        backends["cython"] = _kernels_cy
    except ImportError:
        pass
    return backends


def use_backend(name: str) -> str:
    """Rebind the public kernel functions to the named backend."""
    global BACKEND
    impl = available_backends().get(name)
    if impl is None:
        raise ValueError(f"kernel backend {name!r} not available")
    for fn in _PUBLIC:
        globals()[fn] = getattr(impl, fn)
    BACKEND = name
    return BACKEND


def _default_backend() -> str:
    forced = os.environ.get("CLSH_KERNELS")
    if forced:
        return forced
    return "cython" if "cython" in available_backends() else "python"


use_backend(_default_backend())
