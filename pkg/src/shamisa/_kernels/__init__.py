"""Hot numeric kernels with a selectable backend.

SHAMISA_BACKEND chooses the implementation:
  auto   (default) numba if importable, numpy otherwise
  numba  require the compiled kernels, fail loudly if numba is missing
  numpy  force the pure-numpy path

Both backends expose the same functions and agree to float64 rounding;
results are bit-stable within a backend but may differ between backends
because the summation order differs.
"""

import os

_choice = os.environ.get("SHAMISA_BACKEND", "auto").lower()
if _choice not in ("auto", "numba", "numpy"):
    raise RuntimeError(f"SHAMISA_BACKEND must be auto, numba or numpy, got {_choice!r}")

if _choice == "numpy":
    _impl = None
else:
    try:
        from . import conv_numba as _impl
    except ImportError:
        if _choice == "numba":
            raise
        _impl = None

if _impl is None:
    from . import conv_numpy as _impl

    BACKEND = "numpy"
else:
    BACKEND = "numba"

from .conv_numpy import out_extent

conv2d_forward = _impl.conv2d_forward
conv2d_grad_input = _impl.conv2d_grad_input
conv2d_grad_weight = _impl.conv2d_grad_weight

__all__ = [
    "BACKEND",
    "out_extent",
    "conv2d_forward",
    "conv2d_grad_input",
    "conv2d_grad_weight",
]
