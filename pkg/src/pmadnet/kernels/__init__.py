"""Kernel backend selection.

PMADNET_KERNELS=numba  use the jit-compiled kernels (error if numba missing)
PMADNET_KERNELS=numpy  force the pure-numpy reference kernels
unset                  prefer numba, silently fall back to numpy

Both backends expose the same functions; `active_backend()` reports which
one won.  Selection happens once at import time so a whole process runs on
one backend.
"""

from __future__ import annotations

import os

from ..errors import ConfigError

_choice = os.environ.get("PMADNET_KERNELS", "").strip().lower()
if _choice not in ("", "numba", "numpy"):
    raise ConfigError(f"PMADNET_KERNELS must be 'numba' or 'numpy', got {_choice!r}")

if _choice == "numpy":
    from . import reference as _impl
else:
    try:
        from . import jit as _impl
    except ImportError:
        if _choice == "numba":
            raise
        from . import reference as _impl

conv2d_fw = _impl.conv2d_fw
conv2d_bw_x = _impl.conv2d_bw_x
conv2d_bw_w = _impl.conv2d_bw_w
tconv2d_fw = _impl.tconv2d_fw
tconv2d_bw_x = _impl.tconv2d_bw_x
tconv2d_bw_w = _impl.tconv2d_bw_w
maxpool2d_fw = _impl.maxpool2d_fw
maxpool2d_bw = _impl.maxpool2d_bw
avgpool2d_fw = _impl.avgpool2d_fw
avgpool2d_bw = _impl.avgpool2d_bw


def active_backend() -> str:
    """Name of the backend in use: 'numba' or 'numpy'."""
    return _impl.BACKEND_NAME
