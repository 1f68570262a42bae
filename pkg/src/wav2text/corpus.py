"""Transcript normalization, manifests, and the synthetic tone corpus.

Manifest files are UTF-8, one utterance per line, ``id<TAB>audio_path<TAB>
transcript``.  Relative audio paths resolve against the manifest's folder.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import dsp
from .config import CorpusConfig, DspConfig
from .seq2seq import NOISE, VOCAB

TEXT_SYMBOLS = frozenset("abcdefghijklmnopqrstuvwxyz'.- ")
SPLITS = ("train", "dev", "test")


class ManifestError(ValueError):
    pass


@dataclass
class Utterance:
    id: str
    audio_path: Path
    transcript: str
    frames_path: Path = None
    features_path: dict = field(default_factory=dict)


@dataclass
class Manifest:
    split: str
    utterances: list

    def __len__(self):
        return len(self.utterances)

    def __iter__(self):
        return iter(self.utterances)


# ------------------------------------------------------------ normalization

def normalize_transcript(raw):
    """Lowercase, map anything outside the symbol set to ``<noise>``,
    collapse whitespace runs to one space and trim the ends."""
    text = raw.lower()
    out, i = [], 0
    while i < len(text):
        if text.startswith(NOISE, i):
            out.append(NOISE)
            i += len(NOISE)
            continue
        ch = text[i]
        if ch.isspace():
            if out and out[-1] != " ":
                out.append(" ")
        else:
            out.append(ch if ch in TEXT_SYMBOLS else NOISE)
        i += 1
    return "".join(out).strip(" ")


# ---------------------------------------------------------------- synthesis

def symbol_frequency(symbol, cfg=None):
    cfg = cfg or CorpusConfig()
    return cfg.base_hz + cfg.step_hz * VOCAB.index(symbol)


def symbol_motif(symbol, sample_rate=16000, cfg=None):
    """A fixed tone for one symbol: fundamental plus 1/h-weighted harmonics.

    ``cfg.harmonics`` = 0 keeps every harmonic below Nyquist, so each Mel
    band carries symbol-specific energy rather than noise alone.
    """
    cfg = cfg or CorpusConfig()
    n = int(round(cfg.motif_ms * sample_rate / 1000.0))
    t = np.arange(n) / sample_rate
    f0 = symbol_frequency(symbol, cfg)
    top = int((sample_rate / 2.0 - 1e-9) // f0)
    if cfg.harmonics > 0:
        top = min(top, cfg.harmonics)
    tone = sum(np.sin(2 * np.pi * h * f0 * t) / h for h in range(1, top + 1))
    return tone / np.abs(tone).max()


def synth_utterance(transcript, seed, sample_rate=16000, cfg=None):
    """Concatenated symbol motifs plus seeded Gaussian noise ``noise_db`` below the signal RMS."""
    cfg = cfg or CorpusConfig()
    symbols = VOCAB.tokenize(transcript)
    if not symbols:
        raise ValueError("cannot synthesize an empty transcript")
    signal = np.concatenate([symbol_motif(s, sample_rate, cfg) for s in symbols])
    rms = np.sqrt(np.mean(signal ** 2))
    noise = np.random.default_rng(seed).normal(scale=rms * 10 ** (cfg.noise_db / 20.0), size=signal.size)
    out = signal + noise
    return dsp.Waveform(0.9 * out / np.abs(out).max(), sample_rate)


def split_counts(count):
    held = count // 10
    return count - 2 * held, held, held


def build_corpus(out_dir, cfg=None, seed=0, sample_rate=16000):
    """Write PCM16 audio plus train/dev/test manifests; returns {split: Manifest}."""
    cfg = cfg or CorpusConfig()
    if cfg.count < 1:
        raise ValueError("corpus count must be >= 1")
    out_dir = Path(out_dir)
    (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    alphabet = list(cfg.symbols)
    utts = []
    for i in range(cfg.count):
        length = int(rng.integers(cfg.min_len, cfg.max_len + 1))
        text = normalize_transcript("".join(rng.choice(alphabet, size=length)))
        utt_seed = int(rng.integers(0, 2 ** 31))
        uid = f"utt{i:05d}"
        rel = Path("audio") / f"{uid}.wav"
        dsp.write_wav(out_dir / rel, synth_utterance(text, utt_seed, sample_rate, cfg))
        utts.append(Utterance(uid, rel, text))
    order = rng.permutation(cfg.count)
    n_train, n_dev, _ = split_counts(cfg.count)
    parts = {"train": order[:n_train], "dev": order[n_train:n_train + n_dev], "test": order[n_train + n_dev:]}
    manifests = {}
    for split in SPLITS:
        m = Manifest(split, [utts[k] for k in sorted(parts[split])])
        save_manifest(m, out_dir / f"{split}.tsv")
        manifests[split] = load_manifest(out_dir / f"{split}.tsv", split)
    return manifests


# ---------------------------------------------------------------- manifests

def save_manifest(manifest, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u in manifest:
            fh.write(f"{u.id}\t{Path(u.audio_path).as_posix()}\t{u.transcript}\n")


def load_manifest(path, split=None, check_files=True):
    path = Path(path)
    split = split or path.stem
    utts, seen = [], set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ManifestError(f"{path}:{lineno}: expected id, audio_path, transcript")
            uid, audio, text = parts
            if uid in seen:
                raise ManifestError(f"{path}:{lineno}: duplicate id {uid!r}")
            seen.add(uid)
            audio_path = Path(audio) if Path(audio).is_absolute() else path.parent / audio
            if check_files and not audio_path.exists():
                raise ManifestError(f"{path}:{lineno}: missing audio file {audio_path}")
            utts.append(Utterance(uid, audio_path, text))
    return Manifest(split, utts)


# ------------------------------------------------------------------ frames

def load_frames(utt, dsp_cfg=None):
    """Peak-normalized raw frames of one utterance."""
    dsp_cfg = dsp_cfg or DspConfig()
    wav = dsp.read_wav(utt.audio_path)
    if wav.sample_rate_hz != dsp_cfg.sample_rate:
        raise dsp.AudioFormatError(f"{utt.audio_path}: sample rate {wav.sample_rate_hz}, expected {dsp_cfg.sample_rate}")
    return dsp.frame_signal(dsp.normalize_waveform(wav), dsp_cfg.frame_ms, dsp_cfg.hop_ms)


def spectral_targets(frames, dsp_cfg=None):
    """(log-Mel, MFCC) matrices for one utterance."""
    dsp_cfg = dsp_cfg or DspConfig()
    fbank = dsp.log_mel_spectrogram(frames, dsp_cfg.n_mels, dsp_cfg.sample_rate)
    ceps = dsp.SpectralFeatures(dsp.dct2(fbank.matrix, dsp_cfg.n_ceps), "mfcc")
    return fbank, ceps


def frame_labels(transcript, n_frames, sample_rate=16000, hop=160, width=400, cfg=None):
    """Symbol index under the centre sample of each frame."""
    cfg = cfg or CorpusConfig()
    motif = int(round(cfg.motif_ms * sample_rate / 1000.0))
    ids = [VOCAB.index(s) for s in VOCAB.tokenize(transcript)]
    centres = np.arange(n_frames) * hop + width // 2
    return np.array([ids[min(c // motif, len(ids) - 1)] for c in centres])
