"""Kernel backend selection.

The compiled extension is preferred; the numpy fallback is used when it
is missing or when ``WAV2TEXT_KERNELS=python`` is set in the environment.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("WAV2TEXT_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as _impl  # noqa: F811
        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

im2col = _impl.im2col
col2im = _impl.col2im
lstm_forward = _impl.lstm_forward
lstm_state_backward = _impl.lstm_state_backward
lstm_output_backward = _impl.lstm_output_backward
levenshtein = _impl.levenshtein

__all__ = [
    "BACKEND", "im2col", "col2im", "lstm_forward", "lstm_state_backward",
    "lstm_output_backward", "levenshtein",
]
