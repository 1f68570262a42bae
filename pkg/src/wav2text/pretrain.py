"""Feature-transfer pretraining: regress spectral features from raw frames.

Per utterance the single-target loss is (1/S) sum_s sum_d (f_s(d) - z_s(d))^2
over standardized targets f and trunk+head predictions z.  The multi-target
loss is the sum of the log-Mel and MFCC losses with one shared trunk pass.
Updates use Momentum SGD, one utterance per step.
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import corpus, dsp, rawenc
from . import diffcore as dc
from .checkpoint import Checkpoint, CheckpointError
from .config import PretrainConfig, RunConfig

log = logging.getLogger(__name__)

KINDS = {"fbank": ("fbank",), "mfcc": ("mfcc",), "multi": ("fbank", "mfcc")}


@dataclass
class PretrainExample:
    id: str
    frames: np.ndarray
    targets: dict


@dataclass
class PretrainResult:
    params: dc.ParameterSet
    trace: list
    step_losses: list
    optimizer: dc.OptimizerState
    standardizers: dict = field(default_factory=dict)
    steps: int = 0


def head_dims(cfg):
    return {"fbank": cfg.dsp.n_mels, "mfcc": cfg.dsp.n_ceps}


def prepare_examples(utterances, cfg=None, standardizers=None):
    """Raw frames plus standardized log-Mel and MFCC targets per utterance.

    Standardizer statistics are fitted on these utterances unless given.
    """
    cfg = cfg or RunConfig()
    raw = []
    for u in utterances:
        fm = corpus.load_frames(u, cfg.dsp)
        fbank, ceps = corpus.spectral_targets(fm, cfg.dsp)
        raw.append((u.id, fm.frames, {"fbank": fbank.matrix, "mfcc": ceps.matrix}))
    if not raw:
        raise ValueError("no utterances to pretrain on")
    if standardizers is None:
        standardizers = {k: dsp.fit_standardizer([r[2][k] for r in raw]) for k in ("fbank", "mfcc")}
    examples = [PretrainExample(uid, frames, {k: dsp.apply_standardizer(m, standardizers[k]) for k, m in t.items()})
                for uid, frames, t in raw]
    return examples, standardizers


def init_pretrain_params(cfg, target, seed=None):
    seed = cfg.seed if seed is None else seed
    dims = head_dims(cfg)
    return rawenc.make_params(cfg.rawenc, seed, heads=[(k, dims[k]) for k in KINDS[target]])


def utterance_loss(frames, targets, cfg, params, target):
    """Single-target loss, or the sum of both for ``multi``."""
    kinds = KINDS[target]
    for k in kinds:
        if k not in targets:
            raise KeyError(f"missing {k} targets for {target} pretraining")
        if len(targets[k]) != len(frames):
            raise ValueError(f"{len(frames)} frames but {len(targets[k])} {k} target rows")
    preds = rawenc.predict_features(frames, cfg.rawenc, params, target)
    if target != "multi":
        preds = (preds,)
    losses = [dc.mse_loss(z, targets[k]) for z, k in zip(preds, kinds)]
    return losses[0] if len(losses) == 1 else dc.add(losses[0], losses[1])


def corpus_loss(examples, cfg, params, target):
    with dc.no_grad():
        return float(np.mean([utterance_loss(e.frames, e.targets, cfg, params, target).item() for e in examples]))


def _run(examples, cfg, task, params, seed):
    if not examples:
        raise ValueError("empty pretraining corpus")
    target = task.target
    opt = dc.momentum_sgd(task.learning_rate, task.momentum)
    rng = np.random.default_rng([seed, 1])
    total = task.steps if task.steps > 0 else task.epochs * len(examples)
    trace, step_losses, epoch_losses = [], [], []
    step = epoch = 0
    while step < total:
        for idx in rng.permutation(len(examples)):
            if step >= total:
                break
            ex = examples[idx]
            loss = utterance_loss(ex.frames, ex.targets, cfg, params, target)
            loss.backward()
            if task.clip_norm > 0:
                dc.clip_grad_norm(params, task.clip_norm)
            dc.optimizer_step(params, opt)
            step_losses.append(loss.item())
            epoch_losses.append(loss.item())
            step += 1
        trace.append((epoch, float(np.mean(epoch_losses))))
        log.info("pretrain %s epoch %d mean loss %.6f", target, epoch, trace[-1][1])
        epoch_losses = []
        epoch += 1
    return PretrainResult(params, trace, step_losses, opt, steps=step)


def pretrain_single(examples, cfg=None, task=None, params=None, seed=None):
    cfg = cfg or RunConfig()
    task = task or cfg.pretrain
    if task.target == "multi":
        raise ValueError("pretrain_single needs target fbank or mfcc")
    seed = cfg.seed if seed is None else seed
    params = params or init_pretrain_params(cfg, task.target, seed)
    return _run(examples, cfg, task, params, seed)


def pretrain_multi(examples, cfg=None, task=None, params=None, seed=None):
    cfg = cfg or RunConfig()
    task = task or cfg.pretrain
    if task.target != "multi":
        raise ValueError("pretrain_multi needs target multi")
    seed = cfg.seed if seed is None else seed
    params = params or init_pretrain_params(cfg, "multi", seed)
    return _run(examples, cfg, task, params, seed)


def pretrain(examples, cfg=None, task=None, params=None, seed=None):
    task = task or (cfg or RunConfig()).pretrain
    fn = pretrain_multi if task.target == "multi" else pretrain_single
    return fn(examples, cfg, task, params, seed)


def write_loss_trace(path, trace):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("epoch,mean_loss\n")
        for epoch, loss in trace:
            fh.write(f"{epoch},{loss!r}\n")


def _stats_meta(standardizers):
    return {k: {"mean": s.mean.tolist(), "std": s.std.tolist()} for k, s in standardizers.items()}


def standardizers_from_meta(meta):
    return {k: dsp.Standardizer(np.array(v["mean"]), np.array(v["std"]))
            for k, v in meta.get("standardizers", {}).items()}


def result_checkpoint(result, cfg, target):
    meta = {"stage": "pretrain", "target": target, "steps": result.steps,
            "standardizers": _stats_meta(result.standardizers)}
    return Checkpoint.from_params(result.params, cfg, scope="trunk", epoch=len(result.trace),
                                  optimizer=result.optimizer, meta=meta)


def export_transferred(ckpt, cfg=None):
    """Keep exactly the conv and NIN trunk paths; values copied bit for bit."""
    cfg = cfg or RunConfig()
    paths = rawenc.trunk_paths(cfg.rawenc)
    missing = [p for p in paths if p not in ckpt.params]
    if missing:
        raise CheckpointError(f"checkpoint lacks trunk paths: {missing}")
    meta = {"stage": "transfer", "source_target": ckpt.meta.get("target")}
    return Checkpoint({p: ckpt.params[p].copy() for p in paths}, ckpt.fingerprint, "trunk",
                      epoch=ckpt.epoch, meta=meta)


# ------------------------------------------------------------- comparison

def comparison_matrices(frames, params, cfg, standardizer):
    """Original and predicted log-Mel, both in log-Mel units (S x D_a)."""
    original = dsp.log_mel_spectrogram(frames, cfg.dsp.n_mels, cfg.dsp.sample_rate).matrix
    with dc.no_grad():
        pred_std = rawenc.predict_features(np.atleast_2d(getattr(frames, "frames", frames)),
                                           cfg.rawenc, params, "fbank").data
    predicted = pred_std * standardizer.std + standardizer.mean
    return original, predicted


def emit_comparison_plot(frames, params, cfg, standardizer, out_prefix):
    """Write original/predicted log-Mel CSVs and a two-panel PNG.

    Returns a summary with both matrices and the mean absolute difference
    in standardized units.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    original, predicted = comparison_matrices(frames, params, cfg, standardizer)
    out_prefix = Path(out_prefix)
    dsp.write_features_csv(f"{out_prefix}_original.csv", original)
    dsp.write_features_csv(f"{out_prefix}_predicted.csv", predicted)
    fig, axes = plt.subplots(2, 1, figsize=(8, 5), sharex=True)
    lo, hi = np.percentile(original, [1, 99])
    for ax, mat, title in zip(axes, (original, predicted), ("original log-Mel", "predicted log-Mel")):
        ax.imshow(mat.T, origin="lower", aspect="auto", vmin=lo, vmax=hi, cmap="magma")
        ax.set_title(title)
        ax.set_ylabel("Mel bin")
    axes[1].set_xlabel("frame")
    fig.tight_layout()
    fig.savefig(f"{out_prefix}.png", dpi=100)
    plt.close(fig)
    mad = float(np.mean(np.abs((original - predicted) / standardizer.std)))
    return {"original": original, "predicted": predicted, "mean_abs_diff_std": mad}
