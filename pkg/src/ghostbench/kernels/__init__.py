"""Hot kernels with a compiled backend and a NumPy fallback.

The compiled module is used when it imports; set ``GHOSTBENCH_PURE_PYTHON=1``
to force the fallback. ``BACKEND`` names the active one.
"""
import os

from . import _pykernels

if os.environ.get("GHOSTBENCH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = _pykernels

BACKEND = "cython" if _impl is not _pykernels else "python"

GOLDEN = 0x9E3779B97F4A7C15

mix64 = _impl.mix64
stream_words = _impl.stream_words
cell_bits = _impl.cell_bits
pattern_masks = _impl.pattern_masks
gaussian_stream = _impl.gaussian_stream
grad_forward = _impl.grad_forward
grad_adjoint = _impl.grad_adjoint
shrink = _impl.shrink

__all__ = [
    "BACKEND", "GOLDEN", "mix64", "stream_words", "cell_bits", "pattern_masks",
    "gaussian_stream", "grad_forward", "grad_adjoint", "shrink",
]
