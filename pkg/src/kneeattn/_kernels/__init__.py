"""Hot-loop kernels with a compiled implementation and a numpy fallback.

The compiled extension is used when it imports; set ``KNEEATTN_BACKEND=python``
to force the fallback, or call :func:`set_backend` at runtime.
"""

import os

from . import _gru_py

try:
    from . import _gru_c
except ImportError:  # extension not built
    _gru_c = None

_BACKENDS = {"python": _gru_py}
if _gru_c is not None:
    _BACKENDS["cython"] = _gru_c

_active = None


def available_backends():
    return sorted(_BACKENDS)


def set_backend(name: str) -> None:
    global _active, gru_forward, gru_backward
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    _active = name
    gru_forward = _BACKENDS[name].gru_forward
    gru_backward = _BACKENDS[name].gru_backward


def get_backend() -> str:
    return _active


_requested = os.environ.get("KNEEATTN_BACKEND", "").strip().lower()
if _requested:
    set_backend(_requested)
else:
    set_backend("cython" if "cython" in _BACKENDS else "python")
