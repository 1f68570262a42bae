"""Beam-search transcription and error-rate scoring."""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .seq2seq import VOCAB, InferenceDecoder


@dataclass(frozen=True)
class Hypothesis:
    symbols: tuple
    log_prob: float
    finished: bool = False

    @property
    def normalized_score(self):
        # eos counts toward the length
        return self.log_prob / len(self.symbols) if self.symbols else 0.0

    @property
    def text(self):
        return VOCAB.decode(self.symbols)

    def rank_key(self):
        """Sort key for the winner: best score, then shorter, then lexicographic."""
        return (-self.normalized_score, len(self.symbols), self.symbols)


def default_max_len(n_encoder_states):
    return 2 * n_encoder_states + 10


def beam_search(h_e, params, cfg, beam_size=5, max_len=None):
    """Decode one utterance from its S' x 2H encoder states.

    Each step expands every live hypothesis over all symbols and keeps the
    ``beam_size`` best expansions by log-probability.  Those ending in eos
    move to the finished pool; the rest stay live.  The search stops when
    no expansion stays live or after ``max_len`` steps.  The winner has the
    best length-normalized score in the pool (the unfinished beam if the
    pool is empty).  Returns ``(best, nbest)``, ``nbest`` best first and at
    most ``beam_size`` long.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    h_e = np.asarray(getattr(h_e, "data", h_e), dtype=np.float64)
    if max_len is None:
        max_len = default_max_len(h_e.shape[0])
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    dec = InferenceDecoder(h_e, params, cfg)
    eos = VOCAB.eos
    live = [Hypothesis((), 0.0)]
    hidden, cell, ctx = dec.initial(1)
    finished = []
    room = beam_size
    for _ in range(max_len):
        if not live:
            break
        prev = [h.symbols[-1] if h.symbols else eos for h in live]
        logp, hidden, cell, ctx = dec.step(prev, hidden, cell, ctx)
        scores = np.array([h.log_prob for h in live])[:, None] + logp
        n_sym = scores.shape[1]
        flat = scores.ravel()
        if room < flat.size:
            # partial selection, then an exact ordered pass with tie rules
            cut = np.partition(flat, flat.size - room)[flat.size - room]
            picks = np.nonzero(flat >= cut)[0]
        else:
            picks = np.arange(flat.size)
        cands = sorted(((-flat[k], live[k // n_sym].symbols + (int(k % n_sym),), k) for k in picks))[:room]
        keep_rows, new_live = [], []
        for neg, symbols, k in cands:
            if symbols[-1] == eos:
                finished.append(Hypothesis(symbols, float(-neg), True))
            else:
                new_live.append(Hypothesis(symbols, float(-neg)))
                keep_rows.append(k // n_sym)
        live = new_live
        hidden, cell, ctx = hidden[keep_rows], cell[keep_rows], ctx[keep_rows]
    pool = finished if finished else live
    nbest = sorted(pool, key=Hypothesis.rank_key)
    return nbest[0], nbest[:beam_size]


def greedy_decode(h_e, params, cfg, max_len=None):
    h_e = np.asarray(getattr(h_e, "data", h_e), dtype=np.float64)
    max_len = default_max_len(h_e.shape[0]) if max_len is None else max_len
    dec = InferenceDecoder(h_e, params, cfg)
    hidden, cell, ctx = dec.initial(1)
    symbols, total = [], 0.0
    prev = VOCAB.eos
    for _ in range(max_len):
        logp, hidden, cell, ctx = dec.step([prev], hidden, cell, ctx)
        prev = int(np.argmax(logp[0]))
        total += float(logp[0, prev])
        symbols.append(prev)
        if prev == VOCAB.eos:
            return Hypothesis(tuple(symbols), total, True)
    return Hypothesis(tuple(symbols), total, False)


def write_nbest(path, nbest):
    """rank, normalized score, raw log-prob, transcript; tab separated."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rank, hyp in enumerate(nbest, 1):
            fh.write(f"{rank}\t{hyp.normalized_score!r}\t{hyp.log_prob!r}\t{hyp.text}\n")


def read_nbest(path):
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            rank, norm, lp, text = line.rstrip("\n").split("\t", 3)
            out.append((int(rank), float(norm), float(lp), text))
    return out


# ------------------------------------------------------------------ metrics

def levenshtein(a, b):
    """Unit-cost edit distance between two sequences of hashable items."""
    table = {}
    ia = np.array([table.setdefault(x, len(table)) for x in a], dtype=np.int64)
    ib = np.array([table.setdefault(x, len(table)) for x in b], dtype=np.int64)
    return int(kernels.levenshtein(ia, ib))


def _strip_eos(text):
    cut = text.find("<eos>")
    return text if cut < 0 else text[:cut]


def char_units(text):
    """Vocabulary symbols of ``text``; the noise marker is one unit."""
    return VOCAB.tokenize(_strip_eos(text))


def word_units(text):
    return _strip_eos(text).split()


def edit_counts(hyp, ref, unit="char"):
    split = char_units if unit == "char" else word_units
    r = split(ref)
    if not r:
        raise ValueError("empty reference")
    return levenshtein(split(hyp), r), len(r)


def cer(hyp, ref):
    edits, n = edit_counts(hyp, ref, "char")
    return edits / n


def wer(hyp, ref):
    edits, n = edit_counts(hyp, ref, "word")
    return edits / n


def corpus_error_rate(pairs, unit="char"):
    """Micro average: total edits over total reference length."""
    edits = total = 0
    for hyp, ref in pairs:
        e, n = edit_counts(hyp, ref, unit)
        edits += e
        total += n
    if total == 0:
        raise ValueError("empty reference set")
    return edits / total

