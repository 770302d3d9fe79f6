"""Hot kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when it imports; set
``PANOPTIC_NAV_BACKEND=python`` to force the fallback.
"""

from __future__ import annotations

import os

from . import _fallback

BACKENDS = {"python": _fallback}

try:  # pragma: no cover - depends on the build
    from . import _core

    BACKENDS["compiled"] = _core
except ImportError:
    _core = None


def get_backend(name: str | None = None):
    """Return the kernel module named ``name`` (default: the active one)."""
    if name is None:
        return active
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"kernel backend {name!r} is not available; have {sorted(BACKENDS)}") from None


_requested = os.environ.get("PANOPTIC_NAV_BACKEND", "").strip().lower()
if _requested:
    active = get_backend(_requested)
else:
    active = BACKENDS.get("compiled", _fallback)

BACKEND = "compiled" if active is _core and _core is not None else "python"

__all__ = ["BACKEND", "BACKENDS", "active", "get_backend"]
