"""Small reverse-mode autodiff engine over float64 numpy arrays.

Every op returns a new :class:`Tensor`.  When grad mode is on and any
input requires a gradient, the result records its parents and a closure
mapping the upstream gradient to one gradient per parent.  ``backward``
walks that graph in reverse topological order and accumulates into the
``grad`` slot of leaf tensors only; the graph itself is left intact so a
second call accumulates again.
"""

import contextlib
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from ._pykernels import _sigmoid as _stable_sigmoid


class ShapeError(ValueError):
    """Operand shapes are incompatible for an op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NonFiniteError(f"{op} produced non-finite values")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op")

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        self._op = "leaf"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self._op}{flag})"

    def item(self):
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else None

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data, parents, backward_fn, op):
    data = np.asarray(data, dtype=np.float64)
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._op = op
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    else:
        out.requires_grad = False
        out._parents = ()
        out._backward = None
    return out


def _topo_order(root):
    order = []
    seen = {id(root)}
    stack = [(root, iter(root._parents))]
    while stack:
        node, it = stack[-1]
        for parent in it:
            if parent.requires_grad and id(parent) not in seen:
                seen.add(id(parent))
                stack.append((parent, iter(parent._parents)))
                break
        else:
            stack.pop()
            order.append(node)
    return order


def backward(loss):
    """Accumulate d(loss)/d(leaf) into every reachable leaf requiring grad."""
    loss = as_tensor(loss)
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_topo_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            _check_finite(g, "backward")
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _broadcast_shape(a, b, op):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "add")

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result(a.data + b.data, (a, b), bw, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "sub")

    def bw(g):
        return _unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)

    return _result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a, b, "mul")

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result(a.data * b.data, (a, b), bw, "mul")


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def sigmoid(x):
    x = as_tensor(x)
    y = _stable_sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def lrelu(x, leakiness=0.1):
    """max(x, l*x) with the subgradient at exactly zero taken as ``l``."""
    if not 0.0 <= leakiness < 1.0:
        raise ValueError(f"leakiness must be in [0, 1), got {leakiness}")
    x = as_tensor(x)
    slope = np.where(x.data > 0, 1.0, leakiness)
    return _result(x.data * slope, (x,), lambda g: (g * slope,), "lrelu")


def total(x):
    """Sum of every element, as a scalar tensor."""
    x = as_tensor(x)
    return _result(np.array(x.data.sum()), (x,),
                   lambda g: (np.broadcast_to(g, x.shape).copy(),), "sum")


# -------------------------------------------------------------------- linear

def matmul(a, b):
    """Matrix product for 1-D/2-D operands (numpy ``@`` semantics)."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim not in (1, 2) or b.ndim not in (1, 2):
        raise ShapeError(f"matmul: operands must be 1-D or 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimension mismatch {a.shape[-1]} != {b.shape[0]}")

    def bw(g):
        ga = gb = None
        if a.requires_grad:
            if b.ndim == 2:
                ga = g @ b.data.T
            elif a.ndim == 2:
                ga = np.outer(g, b.data)
            else:
                ga = g * b.data
        if b.requires_grad:
            if a.ndim == 2:
                gb = a.data.T @ g
            elif b.ndim == 2:
                gb = np.outer(a.data, g)
            else:
                gb = g * a.data
        return ga, gb

    return _result(a.data @ b.data, (a, b), bw, "matmul")


def transpose(x):
    x = as_tensor(x)
    if x.ndim != 2:
        raise ShapeError(f"transpose expects 2-D input, got {x.shape}")
    return _result(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def concat(tensors, axis=-1):
    """Join along ``axis`` (last by default); the gradient splits back."""
    tensors = [as_tensor(t) for t in tensors]
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(t.shape[d] != ref[d] for d in range(len(ref)) if d != ax):
            raise ShapeError(f"concat: shape {t.shape} incompatible with {ref} on axis {axis}")
    cuts = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tuple(tensors), bw, "concat")


def stack(tensors):
    """Stack equal-shape tensors along a new leading axis."""
    tensors = [as_tensor(t) for t in tensors]
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ShapeError(f"stack: shape {t.shape} differs from {shape}")

    def bw(g):
        return tuple(g[k] for k in range(len(tensors)))

    return _result(np.stack([t.data for t in tensors]), tuple(tensors), bw, "stack")


def _is_basic_index(idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(p, (int, np.integer, slice)) or p is Ellipsis for p in parts)


def getitem(x, idx):
    x = as_tensor(x)
    out = x.data[idx]
    out = np.array(out, dtype=np.float64, copy=True)

    basic = _is_basic_index(idx)

    def bw(g):
        full = np.zeros_like(x.data)
        if basic:
            full[idx] = g
        else:
            np.add.at(full, idx, g)
        return (full,)

    return _result(out, (x,), bw, "getitem")


def reshape(x, shape):
    x = as_tensor(x)
    return _result(x.data.reshape(shape).copy(), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def mean_pool_over_time(x):
    """Average over the last (time) axis: C x L -> C, or N x C x L -> N x C."""
    x = as_tensor(x)
    length = x.shape[-1]

    def bw(g):
        return (np.repeat(g[..., None] / length, length, axis=-1),)

    return _result(x.data.mean(axis=-1), (x,), bw, "mean_pool")


def embedding_lookup(table, index):
    table = as_tensor(table)
    index = int(index)
    if not 0 <= index < table.shape[0]:
        raise IndexError(f"embedding index {index} outside table of {table.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(table.data)
        full[index] = g
        return (full,)

    return _result(table.data[index].copy(), (table,), bw, "embedding")


# ---------------------------------------------------------------- nonlinear

def softmax(x):
    """Softmax along the last axis, shifted by the max for stability."""
    x = as_tensor(x)
    if x.shape[-1] < 1:
        raise ShapeError("softmax over an empty axis")
    e = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result(y, (x,), bw, "softmax")


def log_softmax(x):
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    y = shifted - lse
    p = np.exp(y)

    def bw(g):
        return (g - p * g.sum(axis=-1, keepdims=True),)

    return _result(y, (x,), bw, "log_softmax")


def conv1d(x, kernels_, bias, stride=1):
    """Valid 1-D correlation.

    ``x`` is C_in x L, or N x C_in x L for N independent inputs sharing
    the same kernels.  ``kernels_`` is C_out x C_in x F and ``bias`` C_out.
    """
    x, w, b = as_tensor(x), as_tensor(kernels_), as_tensor(bias)
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if w.ndim != 3:
        raise ShapeError(f"conv1d: kernels must be C_out x C_in x F, got {w.shape}")
    batched = x.ndim == 3
    if x.ndim not in (2, 3):
        raise ShapeError(f"conv1d: input must be C_in x L or N x C_in x L, got {x.shape}")
    c_out, c_in, width = w.shape
    if x.shape[-2] != c_in:
        raise ShapeError(f"conv1d: input channels C_in={x.shape[-2]} but kernels expect C_in={c_in}")
    if b.shape != (c_out,):
        raise ShapeError(f"conv1d: bias has shape {b.shape}, expected C_out={c_out}")
    length = x.shape[-1]
    if length < width:
        raise ShapeError(f"conv1d: input shorter than filter (L={length} < F={width})")
    xd = x.data if batched else x.data[None]
    cols = kernels.im2col(np.ascontiguousarray(xd), width, stride)
    wmat = w.data.reshape(c_out, c_in * width)
    out = np.matmul(wmat, cols) + b.data[:, None]
    if not batched:
        out = out[0]

    def bw(g):
        g3 = g if batched else g[None]
        gx = gw = gb = None
        if w.requires_grad:
            gw = np.tensordot(g3, cols, axes=([0, 2], [0, 2])).reshape(w.shape)
        if b.requires_grad:
            gb = g3.sum(axis=(0, 2))
        if x.requires_grad:
            gcols = np.matmul(wmat.T, g3)
            gx = kernels.col2im(gcols, c_in, width, length, stride)
            if not batched:
                gx = gx[0]
        return gx, gw, gb

    return _result(out, (x, w, b), bw, "conv1d")


def conv1d_output_length(length, width, stride):
    return (length - width) // stride + 1


def lstm_cell(z, c_prev):
    """Pointwise LSTM update from gate pre-activations.

    ``z`` stacks the input, forget, cell and output pre-activations along
    its last axis (4H); ``c_prev`` is the previous cell state (H).
    Returns ``(h, c)``.
    """
    z, c_prev = as_tensor(z), as_tensor(c_prev)
    hid = c_prev.shape[-1]
    if z.shape[-1] != 4 * hid or z.shape[:-1] != c_prev.shape[:-1]:
        raise ShapeError(f"lstm_cell: gates {z.shape} do not match cell state {c_prev.shape}")
    gates, c_val, tanh_c, h_val = kernels.lstm_forward(z.data, c_prev.data)

    def bw_c(g):
        return kernels.lstm_state_backward(g, gates, c_prev.data)

    c = _result(c_val, (z, c_prev), bw_c, "lstm_state")

    def bw_h(g):
        return kernels.lstm_output_backward(g, gates, tanh_c)

    h = _result(h_val, (z, c), bw_h, "lstm_output")
    return h, c


def lstm_sequence(xproj, w_h, reverse=False):
    """Run an LSTM over a whole sequence as one graph node.

    ``xproj`` is S x 4H (input projection plus bias, precomputed), ``w_h``
    the 4H x H recurrent matrix.  State starts at zero.  Returns the S x H
    hidden states in input order; with ``reverse`` the recurrence runs from
    the last step to the first.  Equivalent to chaining :func:`lstm_cell`,
    but the backward pass forms the recurrent-weight gradient with a single
    matrix product instead of one outer product per step.
    """
    xproj, w_h = as_tensor(xproj), as_tensor(w_h)
    if xproj.ndim != 2 or w_h.ndim != 2 or w_h.shape[0] != 4 * w_h.shape[1] or xproj.shape[1] != w_h.shape[0]:
        raise ShapeError(f"lstm_sequence: inputs {xproj.shape} and recurrent matrix {w_h.shape} do not fit")
    steps, hid = xproj.shape[0], w_h.shape[1]
    order = range(steps - 1, -1, -1) if reverse else range(steps)
    w = w_h.data
    gates = np.empty((steps, 4 * hid))
    tanh_c = np.empty((steps, hid))
    c_prev = np.empty((steps, hid))
    h_prev = np.empty((steps, hid))
    out = np.empty((steps, hid))
    h, c = np.zeros(hid), np.zeros(hid)
    for t in order:
        h_prev[t], c_prev[t] = h, c
        gates[t], c, tanh_c[t], h = kernels.lstm_forward(xproj.data[t] + w @ h, c)
        out[t] = h

    def bw(g):
        dz = np.empty_like(gates)
        dh_next, dc_next = np.zeros(hid), np.zeros(hid)
        for t in reversed(order):
            dz_o, dc = kernels.lstm_output_backward(g[t] + dh_next, gates[t], tanh_c[t])
            dz_s, dc_next = kernels.lstm_state_backward(dc + dc_next, gates[t], c_prev[t])
            dz[t] = dz_o + dz_s
            dh_next = dz[t] @ w
        return dz, dz.T @ h_prev

    return _result(out, (xproj, w_h), bw, "lstm_sequence")


# -------------------------------------------------------------------- losses

def mse_loss(pred, target):
    """Squared error summed over feature dims and averaged over frames.

    For S x D inputs this is (1/S) * sum_s sum_d (target - pred)^2; a
    1-D input counts as a single frame.
    """
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: prediction {pred.shape} vs target {target.shape}")
    frames = pred.shape[0] if pred.ndim == 2 else 1
    diff = pred.data - target.data
    value = np.array((diff * diff).sum() / frames)

    def bw(g):
        d = 2.0 * g * diff / frames
        return d, -d

    return _result(value, (pred, target), bw, "mse")


def cross_entropy_loss(logits, targets):
    """Mean over steps of -log softmax(logits_t)[target_t]."""
    logits = as_tensor(logits)
    targets = np.asarray(targets, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[0] != targets.shape[0]:
        raise ShapeError(f"cross_entropy_loss: logits {logits.shape} vs {targets.shape[0]} targets")
    n_steps, vocab = logits.shape
    if n_steps == 0:
        raise ShapeError("cross_entropy_loss: empty target sequence")
    if targets.min() < 0 or targets.max() >= vocab:
        raise IndexError(f"cross_entropy_loss: target index outside [0, {vocab})")
    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(n_steps)
    value = np.array(-logp[rows, targets].sum() / n_steps)

    def bw(g):
        d = np.exp(logp)
        d[rows, targets] -= 1.0
        return (g * d / n_steps,)

    return _result(value, (logits,), bw, "cross_entropy")


# --------------------------------------------------------------- parameters

def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class ParameterSet:
    """Named parameters keyed by dotted path, plus the set of frozen paths."""

    def __init__(self, tensors=None):
        self._tensors = {}
        self.frozen = set()
        for name, t in (tensors or {}).items():
            self.add(name, t)

    def add(self, name, value):
        if name in self._tensors:
            raise KeyError(f"duplicate parameter path {name!r}")
        t = value if isinstance(value, Tensor) else Tensor(value)
        t.requires_grad = True
        self._tensors[name] = t
        return t

    def __getitem__(self, name):
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def names(self, prefix=""):
        return [n for n in self._tensors if n.startswith(prefix)]

    def items(self):
        return self._tensors.items()

    def freeze(self, paths):
        paths = set(paths)
        missing = paths - self._tensors.keys()
        if missing:
            raise KeyError(f"cannot freeze unknown paths: {sorted(missing)}")
        self.frozen |= paths

    def unfreeze_all(self):
        self.frozen.clear()

    def trainable(self):
        return [n for n in self._tensors if n not in self.frozen]

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def scalar_count(self, names=None):
        names = self._tensors if names is None else names
        return int(sum(self._tensors[n].data.size for n in names))

    def arrays(self):
        return {n: t.data for n, t in self._tensors.items()}

    def load_arrays(self, arrays, strict=True):
        for name, arr in arrays.items():
            if name not in self._tensors:
                if strict:
                    raise KeyError(f"unknown parameter path {name!r}")
                continue
            t = self._tensors[name]
            if t.data.shape != np.shape(arr):
                raise ShapeError(f"{name}: stored shape {np.shape(arr)} vs model shape {t.data.shape}")
            t.data = np.array(arr, dtype=np.float64, copy=True)


# --------------------------------------------------------------- optimizers

@dataclass
class OptimizerState:
    kind: str = "adam"
    learning_rate: float = 0.0005
    momentum: float = 0.9
    adam_betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    buffers: dict = field(default_factory=dict)
    step_count: int = 0

    def __post_init__(self):
        if self.kind not in ("momentum-sgd", "adam"):
            raise ValueError(f"unknown optimizer kind {self.kind!r}")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if not all(0.0 <= b < 1.0 for b in self.adam_betas):
            raise ValueError("adam betas must be in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be positive")
        self.adam_betas = tuple(float(b) for b in self.adam_betas)


def momentum_sgd(learning_rate=0.01, momentum=0.9):
    return OptimizerState(kind="momentum-sgd", learning_rate=learning_rate, momentum=momentum)


def adam(learning_rate=0.0005, betas=(0.9, 0.999), eps=1e-8):
    return OptimizerState(kind="adam", learning_rate=learning_rate, adam_betas=betas, adam_eps=eps)


def optimizer_step(params, state):
    """Apply one update to every non-frozen parameter, then clear all grads.

    Momentum SGD: v <- mu*v - lr*g; p <- p + v.
    Adam: bias-corrected first/second moments; each parameter keeps its
    own step counter so buffers created after an unfreeze start fresh.
    """
    trainable = params.trainable()
    for name in trainable:
        if params[name].grad is None:
            raise ValueError(f"missing gradient for trainable parameter {name!r}")
    lr = state.learning_rate
    for name in trainable:
        p = params[name]
        g = p.grad
        if state.kind == "momentum-sgd":
            buf = state.buffers.get(name)
            if buf is None:
                buf = state.buffers[name] = {"velocity": np.zeros_like(p.data)}
            v = buf["velocity"]
            v *= state.momentum
            v -= lr * g
            p.data = p.data + v
        else:
            b1, b2 = state.adam_betas
            buf = state.buffers.get(name)
            if buf is None:
                buf = state.buffers[name] = {
                    "m": np.zeros_like(p.data), "v": np.zeros_like(p.data), "t": np.zeros(())}
            buf["t"] = buf["t"] + 1.0
            t = float(buf["t"])
            buf["m"] = b1 * buf["m"] + (1.0 - b1) * g
            buf["v"] = b2 * buf["v"] + (1.0 - b2) * g * g
            m_hat = buf["m"] / (1.0 - b1 ** t)
            v_hat = buf["v"] / (1.0 - b2 ** t)
            p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + state.adam_eps)
    state.step_count += 1
    params.zero_grad()


def clip_grad_norm(params, max_norm):
    """Rescale trainable gradients so their joint L2 norm is at most ``max_norm``."""
    grads = [params[n].grad for n in params.trainable() if params[n].grad is not None]
    norm = math.sqrt(sum(float((g * g).sum()) for g in grads))
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for n in params.trainable():
            if params[n].grad is not None:
                params[n].grad = params[n].grad * scale
    return norm
