"""The joint recognizer: raw frames -> trunk -> Bi-LSTM -> attention decoder."""

import numpy as np

from . import diffcore as dc
from . import rawenc, seq2seq
from .config import RunConfig


def init_model(cfg=None, seed=0):
    """Fresh trunk and sequence parameters, drawn in a fixed order from ``seed``."""
    cfg = cfg or RunConfig()
    rng = np.random.default_rng(seed)
    params = rawenc.init_trunk(cfg.rawenc, rng, dc.ParameterSet())
    seq2seq.init_params(cfg.seq2seq, rng, params, input_dim=cfg.rawenc.output_dim,
                        vocab_size=len(seq2seq.VOCAB))
    return params


def encode(frames, cfg, params):
    """S x W raw frames -> S' x 2H encoder states."""
    return seq2seq.bilstm_encode(rawenc.encode_utterance(frames, cfg.rawenc, params), params, cfg.seq2seq)


def utterance_loss(frames, targets, cfg, params):
    """Teacher-forced mean NLL of one utterance, straight from raw frames."""
    return seq2seq.teacher_forced_loss(rawenc.encode_utterance(frames, cfg.rawenc, params),
                                       targets, params, cfg.seq2seq)


def encoder_states(frames, cfg, params):
    """Graph-free encoder pass for decoding."""
    with dc.no_grad():
        return encode(frames, cfg, params).data
