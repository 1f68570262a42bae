"""Joint sequence training with an optional transferred, initially frozen trunk.

One Adam step per utterance on the teacher-forced loss.  When a transfer
checkpoint is given its trunk paths are loaded and frozen for the first
``freeze_epochs`` epochs, then released at that epoch boundary.  Each epoch
ends with a beam-search dev CER; the best-dev parameters are kept.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import corpus, decode, model, rawenc
from . import diffcore as dc
from .checkpoint import Checkpoint, CheckpointError
from .config import RunConfig
from .seq2seq import VOCAB

log = logging.getLogger(__name__)

TRACE_HEADER = "epoch,train_loss,dev_cer,train_cer,frozen_params,trunk_sha256"


@dataclass
class TrainExample:
    id: str
    frames: np.ndarray
    targets: np.ndarray
    transcript: str


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    dev_cer: float
    train_cer: float
    frozen_params: int
    trunk_sha256: str


@dataclass
class TrainResult:
    params: dc.ParameterSet
    trace: list
    optimizer: dc.OptimizerState
    best: Checkpoint
    final: Checkpoint
    initial_trunk_sha256: str
    frozen_at_start: int = 0
    best_epoch: int = 0

    def trunk_hashes(self):
        """Trunk digest after 0, 1, ..., N completed epochs."""
        return [self.initial_trunk_sha256] + [r.trunk_sha256 for r in self.trace]


def prepare_examples(utterances, cfg=None):
    cfg = cfg or RunConfig()
    out = []
    for u in utterances:
        frames = corpus.load_frames(u, cfg.dsp).frames
        out.append(TrainExample(u.id, frames, np.array(VOCAB.encode(u.transcript)), u.transcript))
    return out


def trunk_digest(params, cfg):
    h = hashlib.sha256()
    for path in rawenc.trunk_paths(cfg.rawenc):
        h.update(path.encode())
        h.update(np.ascontiguousarray(params[path].data, dtype="<f8").tobytes())
    return h.hexdigest()


def transcribe(examples, params, cfg, beam_size=None):
    """Best hypothesis text per example."""
    beam_size = beam_size or cfg.decode.beam_size
    max_len = cfg.decode.max_len or None
    out = []
    for ex in examples:
        h_e = model.encoder_states(ex.frames, cfg, params)
        best, _ = decode.beam_search(h_e, params, cfg.seq2seq, beam_size, max_len)
        out.append(best.text)
    return out


def error_rate(examples, params, cfg):
    if not examples:
        return math.nan
    hyps = transcribe(examples, params, cfg)
    return decode.corpus_error_rate([(h, ex.transcript) for h, ex in zip(hyps, examples)])


def load_transfer(params, transferred, cfg):
    """Copy transferred trunk arrays in; returns the loaded paths."""
    transferred.check_config(cfg)
    paths = rawenc.trunk_paths(cfg.rawenc)
    missing = [p for p in paths if p not in transferred.params]
    if missing:
        raise CheckpointError(f"transfer checkpoint lacks trunk paths: {missing}")
    params.load_arrays({p: transferred.params[p] for p in paths})
    return paths


def _set_frozen(params, paths):
    params.unfreeze_all()
    for name, t in params.items():
        t.requires_grad = True
    if paths:
        params.freeze(paths)
        # frozen leaves drop out of the graph, so the trunk backward is skipped
        for p in paths:
            params[p].requires_grad = False


def _checkpoint(params, cfg, epoch, opt, rng, meta):
    return Checkpoint.from_params(params, cfg, scope="model", epoch=epoch, optimizer=opt,
                                  rng_state=rng.bit_generator.state, meta=meta)


def train_joint(cfg, train_examples, dev_examples=(), transferred=None, seed=None,
                epochs=None, track_train_cer=False, on_epoch=None):
    """Train the full recognizer; returns a TrainResult with best and final checkpoints."""
    cfg = cfg or RunConfig()
    tc = cfg.train
    seed = cfg.seed if seed is None else seed
    epochs = tc.total_epochs if epochs is None else epochs
    if not train_examples:
        raise ValueError("empty training set")
    if transferred is not None:
        # fail on a mismatched config before building anything
        transferred.check_config(cfg)

    params = model.init_model(cfg, seed)
    frozen_paths = []
    if transferred is not None:
        loaded = load_transfer(params, transferred, cfg)
        frozen_paths = loaded if tc.freeze_epochs > 0 else []
    frozen_count = params.scalar_count(frozen_paths)
    _set_frozen(params, frozen_paths)
    if transferred is not None:
        log.info("frozen: %d params", frozen_count)

    opt = dc.adam(tc.learning_rate, (tc.adam_beta1, tc.adam_beta2), tc.adam_eps)
    rng = np.random.default_rng([seed, 2])
    trace = []
    initial_hash = trunk_digest(params, cfg)
    best, best_cer, best_epoch = None, math.inf, 0
    for epoch in range(epochs):
        if frozen_paths and epoch == tc.freeze_epochs:
            _set_frozen(params, [])
            frozen_paths = []
            log.info("epoch %d: trunk released, all parameters trainable", epoch)
        order = rng.permutation(len(train_examples)) if tc.shuffle else np.arange(len(train_examples))
        losses = []
        for idx in order:
            ex = train_examples[idx]
            loss = model.utterance_loss(ex.frames, ex.targets, cfg, params)
            loss.backward()
            if tc.clip_norm > 0:
                dc.clip_grad_norm(params, tc.clip_norm)
            dc.optimizer_step(params, opt)
            losses.append(loss.item())
        dev_cer = error_rate(dev_examples, params, cfg)
        train_cer = error_rate(train_examples, params, cfg) if track_train_cer else math.nan
        rec = EpochRecord(epoch + 1, float(np.mean(losses)), dev_cer, train_cer,
                          params.scalar_count(frozen_paths), trunk_digest(params, cfg))
        trace.append(rec)
        log.info("epoch %d loss %.6f dev_cer %.4f train_cer %.4f", rec.epoch, rec.train_loss, dev_cer, train_cer)
        score = dev_cer if not math.isnan(dev_cer) else rec.train_loss
        if best is None or score < best_cer:
            best_cer, best_epoch = score, rec.epoch
            best = _checkpoint(params, cfg, rec.epoch, opt, rng, {"stage": "train", "selected_by": "dev_cer"})
        if on_epoch is not None:
            on_epoch(rec, params)
    final = _checkpoint(params, cfg, epochs, opt, rng, {"stage": "train", "final": True})
    return TrainResult(params, trace, opt, best, final, initial_hash, frozen_count, best_epoch)


def _fmt(x):
    return "" if isinstance(x, float) and math.isnan(x) else repr(x)


def write_trace(path, trace):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(TRACE_HEADER + "\n")
        for r in trace:
            fh.write(f"{r.epoch},{_fmt(r.train_loss)},{_fmt(r.dev_cer)},{_fmt(r.train_cer)},"
                     f"{r.frozen_params},{r.trunk_sha256}\n")
