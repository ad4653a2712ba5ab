"""Training hot kernels with backend selection at import time.

The compiled Cython extension (_fastcore) is preferred when it built; the
NumPy module is the always-available fallback.  Both implement the same
three operations used by every training loop:

    affine(x, w, b, relu)                 forward layer
    backprop_layer(delta, a_in, w, act)   reverse layer
    adam_step(p, g, m, v, t, ...)         in-place optimizer update

Set FLOWCAST_KERNELS=numpy or FLOWCAST_KERNELS=compiled to force a choice
(forcing 'compiled' raises if the extension is missing).  Results agree
across backends to floating-point roundoff; each backend is individually
deterministic.  benchmarks/bench_kernels.py compares their speed.
"""

import os

from . import numpy_backend

_forced = os.environ.get("FLOWCAST_KERNELS", "").strip().lower()

_impl = None
if _forced in ("", "compiled"):
    try:
        from . import _fastcore as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = None
        if _forced == "compiled":
            raise ImportError("FLOWCAST_KERNELS=compiled but the extension is not built")
if _impl is None:
    _impl = numpy_backend

affine = _impl.affine
backprop_layer = _impl.backprop_layer
adam_step = _impl.adam_step


def backend_name():
    return _impl.NAME


def available_backends():
    names = ["numpy"]
    try:
        from . import _fastcore  # noqa: F401
        names.insert(0, "compiled")
    except ImportError:
        pass
    return names


def get_backend(name):
    """Fetch a backend module by name (for cross-checks and benchmarks)."""
    if name == "numpy":
        return numpy_backend
    if name == "compiled":
        from . import _fastcore
        return _fastcore
    raise ValueError(f"unknown kernel backend {name!r}")
