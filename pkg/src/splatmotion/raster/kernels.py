"""Backend selection for the compositing kernels.

The compiled Cython module is used when it was built; otherwise the NumPy
implementation is used.  ``SPLATMOTION_BACKEND=python`` forces the fallback.
"""

from __future__ import annotations

import os
from types import ModuleType

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS: dict[str, ModuleType] = {"python": _fallback}
if _compiled is not None:
    BACKENDS["cython"] = _compiled


def _default() -> str:
    forced = os.environ.get("SPLATMOTION_BACKEND")
    if forced:
        if forced not in BACKENDS:
            raise RuntimeError(f"backend {forced!r} unavailable; have {sorted(BACKENDS)}")
        return forced
    return "cython" if "cython" in BACKENDS else "python"


DEFAULT_BACKEND = _default()


def get(name: str | None = None) -> ModuleType:
    name = name or DEFAULT_BACKEND
    try:
        return BACKENDS[name]
    except KeyError:
        raise RuntimeError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None
