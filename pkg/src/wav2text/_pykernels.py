"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, or when
``WAV2TEXT_KERNELS=python`` is set.  Signatures and results match the
Cython versions exactly up to floating point summation order.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, width, stride):
    """(N, C, L) -> (N, C*width, L_out) patch matrix for valid correlation."""
    n, c, length = x.shape
    l_out = (length - width) // stride + 1
    win = sliding_window_view(x, width, axis=2)[:, :, ::stride, :]
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(n, c * width, l_out)


def col2im(cols, channels, width, length, stride):
    """Adjoint of :func:`im2col`: scatter-add patch gradients back to (N, C, L)."""
    n = cols.shape[0]
    l_out = cols.shape[2]
    cols = cols.reshape(n, channels, width, l_out)
    out = np.zeros((n, channels, length))
    stop = stride * (l_out - 1) + 1
    for f in range(width):
        out[:, :, f:f + stop:stride] += cols[:, :, f, :]
    return out


def _sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def lstm_forward(z, c_prev):
    """Pointwise LSTM cell.

    ``z`` holds pre-activations laid out as [input, forget, cell, output]
    blocks along the last axis.  Returns ``(gates, c, tanh_c, h)`` where
    ``gates`` are the activated blocks in the same layout.
    """
    hid = c_prev.shape[-1]
    gates = np.empty_like(z)
    gates[..., :2 * hid] = _sigmoid(z[..., :2 * hid])
    gates[..., 2 * hid:3 * hid] = np.tanh(z[..., 2 * hid:3 * hid])
    gates[..., 3 * hid:] = _sigmoid(z[..., 3 * hid:])
    i = gates[..., :hid]
    f = gates[..., hid:2 * hid]
    g = gates[..., 2 * hid:3 * hid]
    o = gates[..., 3 * hid:]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    return gates, c, tanh_c, o * tanh_c


def lstm_state_backward(dc, gates, c_prev):
    """Gradient of ``c = f*c_prev + i*g`` w.r.t. the i/f/g pre-activations and c_prev.

    Returns a full-width ``dz`` (output block zero) and ``dc_prev``.
    """
    hid = c_prev.shape[-1]
    i = gates[..., :hid]
    f = gates[..., hid:2 * hid]
    g = gates[..., 2 * hid:3 * hid]
    dz = np.zeros_like(gates)
    dz[..., :hid] = dc * g * i * (1.0 - i)
    dz[..., hid:2 * hid] = dc * c_prev * f * (1.0 - f)
    dz[..., 2 * hid:3 * hid] = dc * i * (1.0 - g * g)
    return dz, dc * f


def lstm_output_backward(dh, gates, tanh_c):
    """Gradient of ``h = o*tanh(c)`` w.r.t. the output pre-activation and c."""
    hid = tanh_c.shape[-1]
    o = gates[..., 3 * hid:]
    dz = np.zeros_like(gates)
    dz[..., 3 * hid:] = dh * tanh_c * o * (1.0 - o)
    return dz, dh * o * (1.0 - tanh_c * tanh_c)


def levenshtein(a, b):
    """Unit-cost edit distance between two integer sequences."""
    a = list(a)
    b = list(b)
    if len(a) < len(b):
        a, b = b, a
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]
