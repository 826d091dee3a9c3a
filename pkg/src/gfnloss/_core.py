"""Kernel backend selection.

The compiled extension is used when it imports; set ``GFNLOSS_PURE_PYTHON=1``
to force the pure-Python fallback.
"""

import os

from gfnloss import _purepy

if os.environ.get("GFNLOSS_PURE_PYTHON"):
    _impl = _purepy
    BACKEND = "python"
else:
    try:
        from gfnloss import _kernels as _impl

        BACKEND = "compiled"
    except ImportError:
        _impl = _purepy
        BACKEND = "python"

simpson_builtin = _impl.simpson_builtin
terminal_mass = _impl.terminal_mass
walk = _impl.walk
adaptive_simpson = _purepy.adaptive_simpson

QUADRATIC = _purepy.QUADRATIC
LINEX1 = _purepy.LINEX1
LINEX_HALF = _purepy.LINEX_HALF
SHIFTED_COSH = _purepy.SHIFTED_COSH
KIND_F1 = _purepy.KIND_F1
KIND_F4 = _purepy.KIND_F4
KIND_F1_OF_EXP = _purepy.KIND_F1_OF_EXP


def backends():
    """Return ``{name: module}`` for every importable backend."""
    out = {"python": _purepy}
    try:
        from gfnloss import _kernels

        out["compiled"] = _kernels
    except ImportError:
        pass
    return out
