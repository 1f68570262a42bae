"""Independent oracles shared by the test modules.

Nothing here touches the backward pass: finite differences only ever
call the forward function on perturbed copies of the inputs.
"""

import numpy as np

FD_STEP = 1e-5
GRAD_TOL = 1e-4


def relative_error(analytic, numeric):
    """||a - n|| / max(||a||, ||n||), zero when both vanish."""
    analytic = np.asarray(analytic, dtype=np.float64).ravel()
    numeric = np.asarray(numeric, dtype=np.float64).ravel()
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < 1e-300:
        return 0.0
    return float(np.linalg.norm(analytic - numeric) / scale)


def central_difference(fn, array, h=FD_STEP, indices=None):
    """Central-difference gradient of scalar ``fn()`` w.r.t. entries of ``array``.

    ``array`` is mutated in place and restored.  ``indices`` restricts the
    probe to a subset of flat positions; the result then has that length.
    """
    flat = array.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = []
    for k in indices:
        orig = flat[k]
        flat[k] = orig + h
        up = float(fn())
        flat[k] = orig - h
        down = float(fn())
        flat[k] = orig
        out.append((up - down) / (2 * h))
    return np.array(out)


def sample_indices(rng, size, k):
    if size <= k:
        return np.arange(size)
    return np.sort(rng.choice(size, size=k, replace=False))


def naive_conv1d(x, w, b, stride):
    """Triple loop valid correlation, C_in x L input."""
    c_out, c_in, width = w.shape
    length = x.shape[1]
    l_out = (length - width) // stride + 1
    out = np.zeros((c_out, l_out))
    for o in range(c_out):
        for t in range(l_out):
            acc = b[o]
            for c in range(c_in):
                for f in range(width):
                    acc += w[o, c, f] * x[c, t * stride + f]
            out[o, t] = acc
    return out


def naive_levenshtein(a, b):
    """Full-table dynamic programme, deliberately separate from the package code."""
    n, m = len(a), len(b)
    table = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        table[i][0] = i
    for j in range(m + 1):
        table[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            table[i][j] = min(table[i - 1][j] + 1, table[i][j - 1] + 1, table[i - 1][j - 1] + cost)
    return table[n][m]


class KinkWatch:
    """Record the sign pattern of every LReLU input during forward passes.

    Central differences are only meaningful when both probes land on the
    same linear piece; a probe pair whose patterns differ straddles a kink
    and is skipped rather than compared.
    """

    def __init__(self, monkeypatch):
        from wav2text import diffcore
        self.patterns = []
        original = diffcore.lrelu

        def watched(x, leakiness=0.1):
            self.patterns.append(np.signbit(np.asarray(getattr(x, "data", x))).copy())
            return original(x, leakiness)

        monkeypatch.setattr(diffcore, "lrelu", watched)

    def snapshot(self, fn):
        self.patterns = []
        value = float(fn())
        return value, self.patterns

    def central_difference(self, fn, array, indices, h=FD_STEP):
        """Returns (kept indices, numeric gradient at those indices)."""
        flat = array.reshape(-1)
        kept, out = [], []
        for k in indices:
            orig = flat[k]
            flat[k] = orig + h
            up, pat_up = self.snapshot(fn)
            flat[k] = orig - h
            down, pat_down = self.snapshot(fn)
            flat[k] = orig
            if all(np.array_equal(a, b) for a, b in zip(pat_up, pat_down)):
                kept.append(k)
                out.append((up - down) / (2 * h))
        return np.array(kept, dtype=np.int64), np.array(out)


def exhaustive_best(h_e, params, cfg, depth):
    """Argmax of length-normalized log-prob over every eos-terminated sequence
    of at most ``depth`` symbols, scored with the graph decoder one prefix at
    a time.  Ties: shorter, then lexicographic."""
    from wav2text import diffcore as dc
    from wav2text import seq2seq

    eos = seq2seq.VOCAB.eos
    he = dc.Tensor(np.asarray(h_e, dtype=np.float64))
    best = None

    def visit(prefix, state, prev, logp):
        nonlocal best
        with dc.no_grad():
            logits, new_state, _ = seq2seq.decoder_step(prev, state, he, params, cfg)
        row = logits.data - logits.data.max()
        row = row - np.log(np.exp(row).sum())
        for sym in range(len(row)):
            seq = prefix + (sym,)
            total = logp + row[sym]
            if sym == eos:
                key = (-total / len(seq), len(seq), seq)
                if best is None or key < best[0]:
                    best = (key, seq, total)
            elif len(seq) < depth:
                visit(seq, new_state, sym, total)

    visit((), seq2seq.initial_state(he, cfg), eos, 0.0)
    return best[1], best[2]
