"""Kernel backend selection.

The compiled ``_kernels`` extension is used when it imports; otherwise, or
when ``GRIDCASCADE_PURE_PYTHON`` is set to a non-empty value other than
``0``, the numpy fallback in ``_kernels_py`` is used. ``BACKEND`` names the
active choice.
"""
import os

from . import _kernels_py

if os.environ.get("GRIDCASCADE_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

project_simplex = _impl.project_simplex
pgd_simplex = _impl.pgd_simplex
rollout = _impl.rollout
transition_counts = _impl.transition_counts

__all__ = ["BACKEND", "project_simplex", "pgd_simplex", "rollout", "transition_counts"]
