"""Kernel backend selection.

The SE(3) kernels exist twice: a compiled Cython core (hdlo._lie_cy) and a
pure-numpy fallback (hdlo._lie_py).  The compiled core is preferred when the
extension built; HDLO_BACKEND=python|cython forces a choice (the cython
setting raises if the extension is missing rather than silently falling
back).
"""

from __future__ import annotations

import os

from hdlo import _lie_py


def _select():
    choice = os.environ.get("HDLO_BACKEND", "auto").lower()
    if choice == "python":
        return _lie_py
    try:
        from hdlo import _lie_cy  # noqa: PLC0415
    except ImportError:
        if choice == "cython":
            raise
        return _lie_py
    return _lie_cy


lie = _select()

BACKEND_NAME = lie.BACKEND_NAME
