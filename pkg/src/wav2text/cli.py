"""Command-line entry point: ``wav2text <subcommand> [flags]``.

Every subcommand accepts ``--config`` and ``--seed``, writes its results as
CSV/TSV files under the output directory, and prints one summary line.
The output directory is ``--outdir``, else ``$WAV2TEXT_OUTDIR``, else the
config's ``paths.workdir``.  Failures exit with status 1 and a one-line
JSON object on stderr: ``{"error": <kind>, "message": <text>}``.
"""

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import checkpoint as ck
from . import corpus, decode, dsp, model, pretrain, train
from .config import ConfigError, load_config, save_config

log = logging.getLogger("wav2text")

OUTDIR_ENV = "WAV2TEXT_OUTDIR"


class UsageError(ValueError):
    pass


# ----------------------------------------------------------------- helpers

def _outdir(args, cfg):
    out = Path(args.outdir or os.environ.get(OUTDIR_ENV) or cfg.paths.workdir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _config(args):
    overrides = []
    for item in args.set or ():
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides.append((key.strip(), value.strip()))
    cfg = load_config(args.config, overrides)
    if args.seed is not None:
        cfg.seed = args.seed
    return cfg


def _manifest(path, split=None):
    if not Path(path).exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    return corpus.load_manifest(path, split)


def _load_ckpt(path):
    if not Path(path).exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    return ck.load_checkpoint(path)


def read_transcripts(path):
    """id -> transcript from a decode output or a manifest (last field is the text)."""
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) < 2:
                raise corpus.ManifestError(f"{path}:{lineno}: expected id<TAB>...<TAB>transcript")
            if parts[0] in out:
                raise corpus.ManifestError(f"{path}:{lineno}: duplicate id {parts[0]!r}")
            out[parts[0]] = parts[-1]
    return out


def write_transcripts(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for uid, text in rows:
            fh.write(f"{uid}\t{text}\n")


# ------------------------------------------------------------- subcommands

def cmd_prepare_data(args, cfg):
    if args.count is not None:
        cfg.corpus.count = args.count
    out = Path(args.data_dir) if args.data_dir else _outdir(args, cfg) / "data"
    manifests = corpus.build_corpus(out, cfg.corpus, seed=cfg.seed, sample_rate=cfg.dsp.sample_rate)
    save_config(cfg, out / "corpus.conf")
    counts = "/".join(str(len(manifests[s])) for s in corpus.SPLITS)
    return f"prepared {cfg.corpus.count} utterances (train/dev/test {counts}) in {out}"


def cmd_extract_features(args, cfg):
    manifest = _manifest(args.manifest)
    out = _outdir(args, cfg) / "features" / manifest.split
    out.mkdir(parents=True, exist_ok=True)
    kinds = ("fbank", "mfcc") if args.kind == "both" else (args.kind,)
    index = out / "index.tsv"
    with open(index, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tkind\tframes\tdims\tpath\n")
        for u in manifest:
            fm = corpus.load_frames(u, cfg.dsp)
            fbank, ceps = corpus.spectral_targets(fm, cfg.dsp)
            for kind, feats in zip(("fbank", "mfcc"), (fbank, ceps)):
                if kind not in kinds:
                    continue
                path = out / f"{u.id}.{kind}.csv"
                dsp.write_features_csv(path, feats.matrix)
                fh.write(f"{u.id}\t{kind}\t{feats.matrix.shape[0]}\t{feats.matrix.shape[1]}\t{path.name}\n")
    return f"extracted {'+'.join(kinds)} for {len(manifest)} utterances into {index}"


def cmd_pretrain(args, cfg):
    task = cfg.pretrain
    if args.target:
        task.target = args.target
    if args.steps is not None:
        task.steps = args.steps
    if args.epochs is not None:
        task.epochs = args.epochs
    cfg.validate()
    manifest = _manifest(args.manifest)
    examples, stats = pretrain.prepare_examples(manifest, cfg)
    result = pretrain.pretrain(examples, cfg, task, seed=cfg.seed)
    result.standardizers = stats
    out = _outdir(args, cfg)
    pretrain.write_loss_trace(out / "pretrain_loss.csv", result.trace)
    full = pretrain.result_checkpoint(result, cfg, task.target)
    ck.save_checkpoint(out / "pretrain.ckpt", full)
    ck.save_checkpoint(out / "transfer.ckpt", pretrain.export_transferred(full, cfg))
    first, last = result.trace[0][1], result.trace[-1][1]
    return (f"pretrained {task.target} for {result.steps} steps: mean loss {first:.4f} -> {last:.4f}; "
            f"wrote {out / 'transfer.ckpt'}")


def cmd_train(args, cfg):
    if args.epochs is not None:
        cfg.train.total_epochs = args.epochs
        cfg.train.freeze_epochs = min(cfg.train.freeze_epochs, args.epochs)
    cfg.validate()
    transferred = _load_ckpt(args.transfer_from) if args.transfer_from else None
    if transferred is not None:
        transferred.check_config(cfg)
    train_set = train.prepare_examples(_manifest(args.train_manifest, "train"), cfg)
    dev_set = train.prepare_examples(_manifest(args.dev_manifest, "dev"), cfg) if args.dev_manifest else []
    result = train.train_joint(cfg, train_set, dev_set, transferred, seed=cfg.seed,
                               track_train_cer=args.track_train_cer)
    out = _outdir(args, cfg)
    train.write_trace(out / "train_trace.csv", result.trace)
    for name, c in (("best.ckpt", result.best), ("final.ckpt", result.final)):
        c.meta["config"] = cfg.to_text()
        ck.save_checkpoint(out / name, c)
    last = result.trace[-1]
    return (f"trained {len(result.trace)} epochs: final loss {last.train_loss:.4f}, "
            f"best epoch {result.best_epoch}; wrote {out / 'best.ckpt'}")


def _model_params(ckpt, cfg):
    if ckpt.scope != "model":
        raise ck.CheckpointError(f"expected a full model checkpoint, got scope {ckpt.scope!r}")
    params = model.init_model(cfg, cfg.seed)
    ckpt.apply_to(params, cfg)
    return params


def cmd_decode(args, cfg):
    if args.beam_size is not None:
        cfg.decode.beam_size = args.beam_size
    cfg.validate()
    ckpt = _load_ckpt(args.checkpoint)
    ckpt.check_config(cfg)
    params = _model_params(ckpt, cfg)
    manifest = _manifest(args.manifest)
    out = _outdir(args, cfg)
    nbest_dir = out / "nbest"
    if args.nbest:
        nbest_dir.mkdir(exist_ok=True)
    rows = []
    for u in manifest:
        frames = corpus.load_frames(u, cfg.dsp).frames
        h_e = model.encoder_states(frames, cfg, params)
        best, nbest = decode.beam_search(h_e, params, cfg.seq2seq, cfg.decode.beam_size, cfg.decode.max_len or None)
        rows.append((u.id, best.text))
        if args.nbest:
            decode.write_nbest(nbest_dir / f"{u.id}.nbest.tsv", nbest)
    hyp = Path(args.output) if args.output else out / f"{manifest.split}.hyp.tsv"
    write_transcripts(hyp, rows)
    return f"decoded {len(rows)} utterances with beam {cfg.decode.beam_size} into {hyp}"


def cmd_evaluate(args, cfg):
    hyps = read_transcripts(args.hyp)
    refs = read_transcripts(args.ref)
    missing = sorted(set(refs) - set(hyps))
    if missing:
        raise corpus.ManifestError(f"hypotheses missing for {len(missing)} ids, first {missing[0]!r}")
    extra = sorted(set(hyps) - set(refs))
    if extra:
        raise corpus.ManifestError(f"hypotheses for unknown ids, first {extra[0]!r}")
    out = Path(args.output) if args.output else _outdir(args, cfg) / "scores.tsv"
    totals = {"char": [0, 0], "word": [0, 0]}
    with open(out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("id\tchar_edits\tref_chars\tword_edits\tref_words\n")
        for uid, ref in refs.items():
            ce, cn = decode.edit_counts(hyps[uid], ref, "char")
            we, wn = decode.edit_counts(hyps[uid], ref, "word")
            totals["char"][0] += ce
            totals["char"][1] += cn
            totals["word"][0] += we
            totals["word"][1] += wn
            fh.write(f"{uid}\t{ce}\t{cn}\t{we}\t{wn}\n")
    cer = totals["char"][0] / totals["char"][1]
    wer = totals["word"][0] / totals["word"][1]
    return f"CER {cer:.4f} WER {wer:.4f} over {len(refs)} utterances; per-utterance scores in {out}"


def cmd_plot_compare(args, cfg):
    ckpt = _load_ckpt(args.checkpoint)
    if "rawenc.head.fbank.1.weight" not in ckpt.params:
        raise ck.CheckpointError("plot-compare needs a pretraining checkpoint with an fbank head")
    ckpt.check_config(cfg)
    target = ckpt.meta.get("target", "fbank")
    params = pretrain.init_pretrain_params(cfg, target, cfg.seed)
    ckpt.apply_to(params, cfg)
    stats = pretrain.standardizers_from_meta(ckpt.meta)
    if "fbank" not in stats:
        raise ck.CheckpointError("checkpoint carries no log-Mel standardizer")
    manifest = _manifest(args.manifest)
    chosen = [u for u in manifest if args.utterance in (None, u.id)]
    if not chosen:
        raise KeyError(f"utterance {args.utterance!r} not in {args.manifest}")
    u = chosen[0]
    prefix = _outdir(args, cfg) / f"compare_{u.id}"
    summary = pretrain.emit_comparison_plot(corpus.load_frames(u, cfg.dsp), params, cfg, stats["fbank"], prefix)
    return (f"{u.id}: mean |original - predicted| = {summary['mean_abs_diff_std']:.4f} std units; "
            f"wrote {prefix}.png")


# ------------------------------------------------------------------ parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="key = value config file (defaults if omitted)")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config key, e.g. --set train.total_epochs=5; repeatable")
    common.add_argument("--outdir", metavar="DIR",
                        help=f"output directory (default: ${OUTDIR_ENV}, else paths.workdir)")
    common.add_argument("--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        help="logging verbosity on stderr")

    parser = argparse.ArgumentParser(prog="wav2text", description="Raw-waveform attention speech recognizer.")
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("prepare-data", parents=[common], help="synthesize a tone corpus with manifests",
                       description="Write PCM16 WAV files plus train/dev/test.tsv manifests.")
    p.add_argument("--count", type=int, help="number of utterances (default corpus.count)")
    p.add_argument("--data-dir", metavar="DIR", help="corpus directory (default OUTDIR/data)")
    p.set_defaults(func=cmd_prepare_data)

    p = sub.add_parser("extract-features", parents=[common], help="write log-Mel / MFCC CSVs",
                       description="Write one CSV per utterance and feature kind, plus index.tsv.")
    p.add_argument("--manifest", required=True, help="id<TAB>audio<TAB>transcript manifest")
    p.add_argument("--kind", default="both", choices=["fbank", "mfcc", "both"], help="feature kind(s)")
    p.set_defaults(func=cmd_extract_features)

    p = sub.add_parser("pretrain", parents=[common], help="feature-transfer pretraining of the trunk",
                       description="Regress standardized spectral features from raw frames; writes "
                                   "pretrain_loss.csv, pretrain.ckpt and transfer.ckpt (trunk only).")
    p.add_argument("--manifest", required=True, help="training manifest")
    p.add_argument("--target", choices=["fbank", "mfcc", "multi"], help="regression target (default pretrain.target)")
    p.add_argument("--steps", type=int, help="total update steps; overrides --epochs when > 0")
    p.add_argument("--epochs", type=int, help="passes over the manifest")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("train", parents=[common], help="joint sequence training",
                       description="Adam on the teacher-forced loss; writes train_trace.csv, best.ckpt "
                                   "(lowest dev CER) and final.ckpt.")
    p.add_argument("--train-manifest", required=True, help="training manifest")
    p.add_argument("--dev-manifest", help="dev manifest for per-epoch CER and model selection")
    p.add_argument("--transfer-from", metavar="CKPT", help="transfer checkpoint; its trunk is frozen "
                                                            "for train.freeze_epochs epochs")
    p.add_argument("--epochs", type=int, help="override train.total_epochs")
    p.add_argument("--track-train-cer", action="store_true", help="also decode the training set each epoch")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", parents=[common], help="beam-search transcription",
                       description="Writes id<TAB>transcript lines, directly usable as evaluate --hyp.")
    p.add_argument("--checkpoint", required=True, help="model checkpoint from train")
    p.add_argument("--manifest", required=True, help="manifest to transcribe")
    p.add_argument("--beam-size", type=int, help="override decode.beam_size")
    p.add_argument("--output", metavar="FILE", help="hypothesis file (default OUTDIR/<split>.hyp.tsv)")
    p.add_argument("--nbest", action="store_true", help="also write OUTDIR/nbest/<id>.nbest.tsv")
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("evaluate", parents=[common], help="CER / WER scoring",
                       description="Score id<TAB>transcript hypotheses against a manifest or transcript file "
                                   "(last field is the text). Micro-averaged CER and WER.")
    p.add_argument("--hyp", required=True, help="hypothesis file from decode")
    p.add_argument("--ref", required=True, help="reference manifest or id<TAB>transcript file")
    p.add_argument("--output", metavar="FILE", help="per-utterance scores (default OUTDIR/scores.tsv)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("plot-compare", parents=[common], help="original vs predicted log-Mel",
                       description="Write <prefix>_original.csv, <prefix>_predicted.csv and a PNG.")
    p.add_argument("--checkpoint", required=True, help="pretraining checkpoint (pretrain.ckpt)")
    p.add_argument("--manifest", required=True, help="manifest holding the utterance")
    p.add_argument("--utterance", help="utterance id (default: first in manifest)")
    p.set_defaults(func=cmd_plot_compare)
    return parser


ERRORS = (ConfigError, ck.CheckpointError, corpus.ManifestError, dsp.AudioFormatError, UsageError,
          FileNotFoundError, KeyError, ValueError, OSError)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        cfg = _config(args)
        summary = args.func(args, cfg)
    except ERRORS as exc:
        message = exc.args[0] if isinstance(exc, KeyError) and exc.args else str(exc)
        print(json.dumps({"error": type(exc).__name__, "command": args.command, "message": str(message)}),
              file=sys.stderr)
        return 1
    print(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())
