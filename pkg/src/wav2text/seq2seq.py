"""Bi-LSTM upper encoder, attention, and the character decoder.

Decoder step t:
    input  = [embed(y_{t-1}); c_{t-1}]          (previous context fed back)
    h_t    = LSTM(input, h_{t-1})
    a_t    = softmax_s score(h^e_s, h_t)        (attention from the current state)
    c_t    = sum_s a_t(s) h^e_s
    logits = W_out [h_t; c_t] + b_out

The eos symbol doubles as the start token.
"""

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .config import Seq2SeqConfig

LETTERS = "abcdefghijklmnopqrstuvwxyz"
NOISE = "<noise>"
EOS = "<eos>"


class Vocabulary:
    """The 32 output symbols: a-z, apostrophe, period, dash, space, noise, eos."""

    def __init__(self):
        self.symbols = list(LETTERS) + ["'", ".", "-", " ", NOISE, EOS]
        self._index = {s: i for i, s in enumerate(self.symbols)}
        self.eos = self._index[EOS]
        self.noise = self._index[NOISE]

    def __len__(self):
        return len(self.symbols)

    def __contains__(self, sym):
        return sym in self._index

    def index(self, sym):
        try:
            return self._index[sym]
        except KeyError:
            raise KeyError(f"symbol {sym!r} not in vocabulary") from None

    def symbol(self, idx):
        if not 0 <= idx < len(self.symbols):
            raise KeyError(f"symbol index {idx} outside vocabulary")
        return self.symbols[idx]

    def tokenize(self, text):
        """Split normalized text into symbols, reading ``<noise>`` as one token."""
        out, i = [], 0
        while i < len(text):
            if text.startswith(NOISE, i):
                out.append(NOISE)
                i += len(NOISE)
            elif text.startswith(EOS, i):
                out.append(EOS)
                i += len(EOS)
            else:
                out.append(text[i])
                i += 1
        return out

    def encode(self, text, add_eos=True):
        ids = [self.index(s) for s in self.tokenize(text)]
        return ids + [self.eos] if add_eos else ids

    def decode(self, ids, strip_eos=True):
        ids = list(ids)
        if strip_eos and self.eos in ids:
            ids = ids[:ids.index(self.eos)]
        return "".join(self.symbol(int(i)) for i in ids)


VOCAB = Vocabulary()


@dataclass
class DecoderState:
    hidden: dc.Tensor
    cell: dc.Tensor
    context: dc.Tensor

    @classmethod
    def zeros(cls, decoder_units, context_dim):
        return cls(dc.Tensor(np.zeros(decoder_units)), dc.Tensor(np.zeros(decoder_units)),
                   dc.Tensor(np.zeros(context_dim)))


# ------------------------------------------------------------- parameters

def _lstm_params(params, rng, prefix, in_dim, hidden):
    params.add(f"{prefix}.W_x", dc.glorot_uniform(rng, (4 * hidden, in_dim), in_dim, 4 * hidden))
    params.add(f"{prefix}.W_h", dc.glorot_uniform(rng, (4 * hidden, hidden), hidden, 4 * hidden))
    params.add(f"{prefix}.b", np.zeros(4 * hidden))


def init_params(cfg, rng, params, input_dim=128, vocab_size=32):
    """Encoder LSTMs, attention, decoder LSTM, embedding and output layer."""
    in_dim = input_dim
    for layer in range(cfg.lstm_layers):
        for direction in ("fwd", "bwd"):
            _lstm_params(params, rng, f"seq2seq.enc.{layer}.{direction}", in_dim, cfg.lstm_units)
        in_dim = 2 * cfg.lstm_units
    m, n = 2 * cfg.lstm_units, cfg.decoder_units
    if cfg.attention == "bilinear":
        params.add("seq2seq.att.W_s", dc.glorot_uniform(rng, (m, n), n, m))
    elif cfg.attention == "mlp":
        a = cfg.attention_hidden
        params.add("seq2seq.att.W_s", dc.glorot_uniform(rng, (a, m + n), m + n, a))
        params.add("seq2seq.att.V_s", dc.glorot_uniform(rng, (a,), a, 1))
    params.add("seq2seq.dec.embed", dc.glorot_uniform(rng, (vocab_size, cfg.embed_dim), vocab_size, cfg.embed_dim))
    _lstm_params(params, rng, "seq2seq.dec", cfg.embed_dim + m, n)
    params.add("seq2seq.out.W", dc.glorot_uniform(rng, (vocab_size, n + m), n + m, vocab_size))
    params.add("seq2seq.out.b", np.zeros(vocab_size))
    return params


# ----------------------------------------------------------------- encoder

def subsampled_length(s, layers=3):
    for _ in range(layers):
        s //= 2
    return s


def bilstm_encode(features, params, cfg=None):
    """S x D frame features -> S' x 2H encoder states, S' = floor^3(S / 2).

    After each bidirectional layer only the odd-indexed steps (1, 3, 5, ...)
    are kept, which halves the length with floor rounding.
    """
    cfg = cfg or Seq2SeqConfig()
    x = dc.as_tensor(features)
    if x.ndim != 2:
        raise dc.ShapeError(f"bilstm_encode expects S x D features, got {x.shape}")
    if subsampled_length(x.shape[0], cfg.lstm_layers) < 1:
        raise ValueError(f"utterance too short after subsampling ({x.shape[0]} frames)")
    for layer in range(cfg.lstm_layers):
        dirs = []
        for direction in ("fwd", "bwd"):
            pre = f"seq2seq.enc.{layer}.{direction}"
            xproj = dc.add(dc.matmul(x, dc.transpose(params[f"{pre}.W_x"])), params[f"{pre}.b"])
            dirs.append(dc.lstm_sequence(xproj, params[f"{pre}.W_h"], reverse=direction == "bwd"))
        x = dc.concat(dirs, axis=-1)[1::2]
    return x


# --------------------------------------------------------------- attention

def attention_score(h_e_s, h_d_t, variant, params):
    """Score of one encoder state against one decoder state."""
    h_e_s, h_d_t = dc.as_tensor(h_e_s), dc.as_tensor(h_d_t)
    if variant == "dot":
        if h_e_s.shape != h_d_t.shape:
            raise dc.ShapeError(f"dot score needs M == N, got {h_e_s.shape[0]} and {h_d_t.shape[0]}")
        return dc.matmul(h_e_s, h_d_t)
    if variant == "bilinear":
        w = params["seq2seq.att.W_s"]
        if w.shape != (h_e_s.shape[0], h_d_t.shape[0]):
            raise dc.ShapeError(f"bilinear W_s is {w.shape}, expected {(h_e_s.shape[0], h_d_t.shape[0])}")
        return dc.matmul(h_e_s, dc.matmul(w, h_d_t))
    if variant == "mlp":
        w, v = params["seq2seq.att.W_s"], params["seq2seq.att.V_s"]
        if w.shape[1] != h_e_s.shape[0] + h_d_t.shape[0]:
            raise dc.ShapeError(f"mlp W_s has {w.shape[1]} columns, expected M + N = {h_e_s.shape[0] + h_d_t.shape[0]}")
        return dc.matmul(v, dc.tanh(dc.matmul(w, dc.concat([h_e_s, h_d_t]))))
    raise ValueError(f"unknown score variant {variant!r}")


def encoder_projection(h_e, params):
    """W_s[:, :M] applied to every encoder state; reused across decoder steps."""
    m = h_e.shape[1]
    w_enc = params["seq2seq.att.W_s"][:, :m]
    return dc.matmul(h_e, dc.transpose(w_enc))


def attention_scores(h_e, h_d_t, variant, params, enc_proj=None):
    h_e, h_d_t = dc.as_tensor(h_e), dc.as_tensor(h_d_t)
    if variant == "dot":
        if h_e.shape[1] != h_d_t.shape[0]:
            raise dc.ShapeError(f"dot score needs M == N, got {h_e.shape[1]} and {h_d_t.shape[0]}")
        return dc.matmul(h_e, h_d_t)
    if variant == "bilinear":
        return dc.matmul(h_e, dc.matmul(params["seq2seq.att.W_s"], h_d_t))
    if variant == "mlp":
        m = h_e.shape[1]
        if enc_proj is None:
            enc_proj = encoder_projection(h_e, params)
        dec_proj = dc.matmul(params["seq2seq.att.W_s"][:, m:], h_d_t)
        return dc.matmul(dc.tanh(dc.add(enc_proj, dec_proj)), params["seq2seq.att.V_s"])
    raise ValueError(f"unknown score variant {variant!r}")


def attend(h_e, h_d_t, variant, params, enc_proj=None):
    """Context vector c_t = sum_s a_t(s) h^e_s and the weights a_t."""
    h_e = dc.as_tensor(h_e)
    if h_e.ndim != 2 or h_e.shape[0] < 1:
        raise dc.ShapeError(f"attend needs at least one encoder state, got {h_e.shape}")
    weights = dc.softmax(attention_scores(h_e, h_d_t, variant, params, enc_proj))
    return dc.matmul(weights, h_e), weights


# ----------------------------------------------------------------- decoder

def decoder_step(prev_symbol, state, h_e, params, cfg=None, enc_proj=None):
    """One decoding step; returns (logits, new state, attention weights)."""
    cfg = cfg or Seq2SeqConfig()
    vocab = params["seq2seq.dec.embed"].shape[0]
    if not 0 <= int(prev_symbol) < vocab:
        raise KeyError(f"unknown symbol index {prev_symbol}")
    emb = dc.embedding_lookup(params["seq2seq.dec.embed"], prev_symbol)
    inp = dc.concat([emb, state.context])
    z = dc.add(dc.add(dc.matmul(params["seq2seq.dec.W_x"], inp),
                      dc.matmul(params["seq2seq.dec.W_h"], state.hidden)),
               params["seq2seq.dec.b"])
    h, c = dc.lstm_cell(z, state.cell)
    ctx, weights = attend(h_e, h, cfg.attention, params, enc_proj)
    logits = dc.add(dc.matmul(params["seq2seq.out.W"], dc.concat([h, ctx])), params["seq2seq.out.b"])
    return logits, DecoderState(h, c, ctx), weights


def initial_state(h_e, cfg=None):
    cfg = cfg or Seq2SeqConfig()
    return DecoderState.zeros(cfg.decoder_units, h_e.shape[1])


def teacher_forced_logits(h_e, targets, params, cfg=None):
    cfg = cfg or Seq2SeqConfig()
    h_e = dc.as_tensor(h_e)
    enc_proj = encoder_projection(h_e, params) if cfg.attention == "mlp" else None
    state = initial_state(h_e, cfg)
    prev = VOCAB.eos
    rows = []
    for y in targets:
        logits, state, _ = decoder_step(prev, state, h_e, params, cfg, enc_proj)
        rows.append(logits)
        prev = y
    return dc.stack(rows)


def teacher_forced_loss(features, targets, params, cfg=None):
    """Mean per-step negative log-likelihood of ``targets`` (must end with eos).

    ``features`` are the S x D per-frame trunk outputs; they pass through
    the Bi-LSTM encoder here.
    """
    cfg = cfg or Seq2SeqConfig()
    targets = [int(t) for t in targets]
    if not targets:
        raise ValueError("empty target sequence")
    if targets[-1] != VOCAB.eos:
        raise ValueError("target sequence must end with eos")
    h_e = bilstm_encode(features, params, cfg)
    return dc.cross_entropy_loss(teacher_forced_logits(h_e, targets, params, cfg), targets)


# ------------------------------------------------- batched numpy inference

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class InferenceDecoder:
    """Graph-free decoder over a batch of hypotheses sharing one encoding.

    Mirrors :func:`decoder_step` exactly but works on plain arrays with a
    leading batch axis, so beam search can expand every live hypothesis
    in one pass.
    """

    def __init__(self, h_e, params, cfg=None):
        self.cfg = cfg or Seq2SeqConfig()
        p = {k: params[k].data for k in params.names("seq2seq.")}
        self.p = p
        self.h_e = np.asarray(getattr(h_e, "data", h_e), dtype=np.float64)
        m = self.h_e.shape[1]
        self.m = m
        if self.cfg.attention == "mlp":
            self.enc_proj = self.h_e @ p["seq2seq.att.W_s"][:, :m].T
            self.w_dec = p["seq2seq.att.W_s"][:, m:]

    def initial(self, batch=1):
        n = self.cfg.decoder_units
        return np.zeros((batch, n)), np.zeros((batch, n)), np.zeros((batch, self.m))

    def step(self, prev, hidden, cell, context):
        """Returns (log-probs B x V, hidden, cell, context)."""
        p = self.p
        prev = np.asarray(prev, dtype=np.int64)
        inp = np.concatenate([p["seq2seq.dec.embed"][prev], context], axis=1)
        z = inp @ p["seq2seq.dec.W_x"].T + hidden @ p["seq2seq.dec.W_h"].T + p["seq2seq.dec.b"]
        n = hidden.shape[1]
        i, f = _sigmoid(z[:, :n]), _sigmoid(z[:, n:2 * n])
        g, o = np.tanh(z[:, 2 * n:3 * n]), _sigmoid(z[:, 3 * n:])
        cell = f * cell + i * g
        hidden = o * np.tanh(cell)
        att = self.cfg.attention
        if att == "dot":
            scores = hidden @ self.h_e.T
        elif att == "bilinear":
            scores = (hidden @ p["seq2seq.att.W_s"].T) @ self.h_e.T
        else:
            pre = np.tanh(self.enc_proj[None, :, :] + (hidden @ self.w_dec.T)[:, None, :])
            scores = pre @ p["seq2seq.att.V_s"]
        scores = scores - scores.max(axis=1, keepdims=True)
        weights = np.exp(scores)
        weights /= weights.sum(axis=1, keepdims=True)
        context = weights @ self.h_e
        logits = np.concatenate([hidden, context], axis=1) @ p["seq2seq.out.W"].T + p["seq2seq.out.b"]
        shifted = logits - logits.max(axis=1, keepdims=True)
        logp = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        return logp, hidden, cell, context
