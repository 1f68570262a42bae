"""Convolutional + NIN trunk over raw frames, and the spectral regression heads.

Each frame is processed independently.  Frames of one utterance are run
as a batch (N x 1 x W) through the same kernels, which is equivalent to
encoding them one at a time.

Parameter layout::

    rawenc.conv{1..4}.{weight,bias}       C_out x C_in x F, C_out
    rawenc.nin1.{0,1,2}.{weight,bias}     1x1 convs, LReLU
    rawenc.head.<kind>.{0,1}.{weight,bias} 1x1 tanh then 1x1 identity

Only the conv and nin1 paths are transferred to the recognizer.
"""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .config import RawEncoderConfig

HEAD_KINDS = ("fbank", "mfcc")


@dataclass
class FrameEncoding:
    feature_map: dc.Tensor
    pooled: dc.Tensor
    heads: dict = None


def trunk_paths(cfg):
    paths = []
    for k in range(1, len(cfg.conv_channels) + 1):
        paths += [f"rawenc.conv{k}.weight", f"rawenc.conv{k}.bias"]
    for j in range(len(cfg.nin_channels)):
        paths += [f"rawenc.nin1.{j}.weight", f"rawenc.nin1.{j}.bias"]
    return paths


def head_paths(kind):
    return [f"rawenc.head.{kind}.{j}.{p}" for j in (0, 1) for p in ("weight", "bias")]


def _add_conv(params, rng, name, c_out, c_in, width, leakiness=None):
    """Glorot uniform, or He uniform with the LReLU gain when ``leakiness`` is given."""
    shape = (c_out, c_in, width)
    if leakiness is None:
        weight = dc.glorot_uniform(rng, shape, c_in * width, c_out * width)
    else:
        bound = np.sqrt(6.0 / ((1.0 + leakiness ** 2) * c_in * width))
        weight = rng.uniform(-bound, bound, size=shape)
    params.add(f"{name}.weight", weight)
    params.add(f"{name}.bias", np.zeros(c_out))


def init_trunk(cfg, rng, params):
    if cfg.init not in ("he", "glorot"):
        raise ValueError(f"unknown trunk init {cfg.init!r}")
    gain = cfg.leakiness if cfg.init == "he" else None
    c_in = 1
    for k, (c_out, width) in enumerate(zip(cfg.conv_channels, cfg.conv_filters), 1):
        _add_conv(params, rng, f"rawenc.conv{k}", c_out, c_in, width, gain)
        c_in = c_out
    for j, c_out in enumerate(cfg.nin_channels):
        _add_conv(params, rng, f"rawenc.nin1.{j}", c_out, c_in, 1, gain)
        c_in = c_out
    return params


def init_head(cfg, rng, params, kind, out_dim):
    _add_conv(params, rng, f"rawenc.head.{kind}.0", cfg.head_hidden, cfg.output_dim, 1)
    _add_conv(params, rng, f"rawenc.head.{kind}.1", out_dim, cfg.head_hidden, 1)
    return params


def trace_lengths(cfg, width):
    """Time-axis length after each conv layer for a frame of ``width`` samples."""
    out = [width]
    for f, s in zip(cfg.conv_filters, cfg.conv_strides):
        out.append(dc.conv1d_output_length(out[-1], f, s))
    return out


def _trunk_map(x, cfg, params):
    h = x
    for k, stride in enumerate(cfg.conv_strides, 1):
        h = dc.conv1d(h, params[f"rawenc.conv{k}.weight"], params[f"rawenc.conv{k}.bias"], stride)
        h = dc.lrelu(h, cfg.leakiness)
    for j in range(len(cfg.nin_channels)):
        h = dc.conv1d(h, params[f"rawenc.nin1.{j}.weight"], params[f"rawenc.nin1.{j}.bias"], 1)
        h = dc.lrelu(h, cfg.leakiness)
    return h


def _as_batch(frames, cfg):
    """Frames (W or S x W, array or Tensor) -> S x 1 x W tensor."""
    frames = getattr(frames, "frames", frames)
    t = dc.as_tensor(frames)
    if t.ndim not in (1, 2):
        raise ValueError(f"expected W or S x W frames, got shape {t.shape}")
    width = t.shape[-1]
    if width < cfg.conv_filters[0]:
        raise ValueError(f"frame of {width} samples is shorter than the first filter ({cfg.conv_filters[0]})")
    rows = 1 if t.ndim == 1 else t.shape[0]
    return dc.reshape(t, (rows, 1, width))


def encode_frame(frame, cfg, params):
    """Single W-sample frame -> 128 x L_final map and its time-mean."""
    if dc.as_tensor(frame).ndim != 1:
        raise ValueError(f"encode_frame expects one frame, got shape {np.shape(frame)}")
    fmap = _trunk_map(_as_batch(frame, cfg), cfg, params)[0]
    return FrameEncoding(fmap, dc.mean_pool_over_time(fmap))


def encode_utterance(frames, cfg, params):
    """S x W frames -> S x 128 pooled trunk outputs, row order preserved."""
    return dc.mean_pool_over_time(_trunk_map(_as_batch(frames, cfg), cfg, params))


def _head(fmap, params, kind):
    pre = f"rawenc.head.{kind}"
    if f"{pre}.0.weight" not in params:
        raise KeyError(f"no parameters for head {kind!r}")
    w0 = params[f"{pre}.0.weight"]
    if w0.shape[1] != fmap.shape[-2]:
        raise dc.ShapeError(f"head {kind!r} expects {w0.shape[1]} input channels, trunk gives {fmap.shape[-2]}")
    h = dc.tanh(dc.conv1d(fmap, w0, params[f"{pre}.0.bias"], 1))
    h = dc.conv1d(h, params[f"{pre}.1.weight"], params[f"{pre}.1.bias"], 1)
    return dc.mean_pool_over_time(h)


def predict_features(frames, cfg, params, head="fbank"):
    """Regress spectral features from raw frames.

    ``head`` is ``"fbank"``, ``"mfcc"`` or ``"multi"``; multi returns a
    ``(z_fbank, z_mfcc)`` pair computed from one shared trunk pass.  A
    single 1-D frame gives D-vectors, an S x W batch gives S x D.
    """
    single = dc.as_tensor(getattr(frames, "frames", frames)).ndim == 1
    fmap = _trunk_map(_as_batch(frames, cfg), cfg, params)
    kinds = HEAD_KINDS if head == "multi" else (head,)
    outs = []
    for kind in kinds:
        z = _head(fmap, params, kind)
        outs.append(z[0] if single else z)
    return tuple(outs) if head == "multi" else outs[0]


def make_params(cfg=None, seed=0, heads=()):
    """Fresh trunk plus the requested ``(kind, dim)`` heads."""
    cfg = cfg or RawEncoderConfig()
    rng = np.random.default_rng(seed)
    params = init_trunk(cfg, rng, dc.ParameterSet())
    for kind, dim in heads:
        init_head(cfg, rng, params, kind, dim)
    return params
