"""Backend selection for the hot kernels.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementations in ``_pykernels`` are used. Setting
``VADR_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os

from vadr import _pykernels

_FUNCTIONS = ("rotation_distance", "integrate_orientation", "protocol_step", "replay_frame_hold")


def _load_compiled():
    if os.environ.get("VADR_PURE_PYTHON") == "1":
        return None
    try:
        from vadr import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
BACKEND = "cython" if _compiled is not None else "python"
_impl = _compiled if _compiled is not None else _pykernels

rotation_distance = _impl.rotation_distance
integrate_orientation = _impl.integrate_orientation
protocol_step = _impl.protocol_step
replay_frame_hold = _impl.replay_frame_hold


def backends():
    """Available backend modules keyed by name (for tests and benchmarks)."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["cython"] = _compiled
    return out
