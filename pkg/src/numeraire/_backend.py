"""Kernel backend selection: compiled extension when present, numpy otherwise."""
from __future__ import annotations

from . import _kernels_py

try:  # pragma: no cover - exercised only when the extension is built
    from . import _kernels as _impl

    BACKEND = "compiled"
except ImportError:  # pragma: no cover
    _impl = _kernels_py
    BACKEND = "python"

compound_returns = _impl.compound_returns
bessel_euler = _impl.bessel_euler


def backend_name() -> str:
    """Which kernel implementation is active ("compiled" or "python")."""
    return BACKEND
