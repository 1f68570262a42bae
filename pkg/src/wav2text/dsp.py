"""Signal front-end: PCM16 I/O, framing, log-Mel and MFCC targets, standardization.

Raw frames fed to the network are left unwindowed; the Hann window is
applied only inside the spectral computations.
"""

import wave
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.signal

LOG_FLOOR = 1e-10
STD_FLOOR = 1e-8


class AudioFormatError(ValueError):
    """The file is not mono 16-bit PCM RIFF/WAVE."""


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate_hz: int = 16000

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def duration_s(self):
        return len(self.samples) / self.sample_rate_hz


@dataclass
class FrameMatrix:
    frames: np.ndarray
    sample_rate_hz: int = 16000
    frame_length_ms: float = 25.0
    hop_ms: float = 10.0

    @property
    def width(self):
        return self.frames.shape[1]

    @property
    def hop(self):
        return hop_samples(self.sample_rate_hz, self.hop_ms)

    def __len__(self):
        return self.frames.shape[0]


@dataclass
class SpectralFeatures:
    matrix: np.ndarray
    kind: str
    standardized: bool = False
    mean: np.ndarray = field(default=None, repr=False)
    std: np.ndarray = field(default=None, repr=False)

    @property
    def shape(self):
        return self.matrix.shape


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def apply(self, feats):
        return apply_standardizer(feats, self)


# ------------------------------------------------------------------ file io

def read_wav(path):
    """Decode a mono PCM16 WAVE file to floats in [-1, 1) (scaled by 1/32768)."""
    try:
        with wave.open(str(path), "rb") as fh:
            channels, width, rate = fh.getnchannels(), fh.getsampwidth(), fh.getframerate()
            if fh.getcomptype() != "NONE":
                raise AudioFormatError(f"{path}: compressed WAVE ({fh.getcomptype()}) is not supported")
            raw = fh.readframes(fh.getnframes())
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: not a PCM RIFF/WAVE file ({exc})") from None
    if channels != 1:
        raise AudioFormatError(f"{path}: expected mono audio, got {channels} channels")
    if width != 2:
        raise AudioFormatError(f"{path}: expected 16-bit samples, got {8 * width}-bit")
    pcm = np.frombuffer(raw, dtype="<i2")
    return Waveform(pcm.astype(np.float64) / 32768.0, rate)


def write_wav(path, waveform):
    """Write samples as mono little-endian PCM16, scaled by 32768 and clipped."""
    pcm = np.clip(np.round(waveform.samples * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as fh:
        fh.setnchannels(1)
        fh.setsampwidth(2)
        fh.setframerate(int(waveform.sample_rate_hz))
        fh.writeframes(pcm.tobytes())


def write_features_csv(path, matrix):
    """One frame per line, comma separated, nine decimals."""
    matrix = getattr(matrix, "matrix", matrix)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in np.atleast_2d(matrix):
            fh.write(",".join(f"{v:.9f}" for v in row) + "\n")


def read_features_csv(path):
    return np.loadtxt(path, delimiter=",", ndmin=2, encoding="utf-8")


# ---------------------------------------------------------------- waveform

def normalize_waveform(w):
    """Scale so the peak absolute sample is exactly 1; silence is returned as-is."""
    if len(w.samples) == 0:
        raise ValueError("cannot normalize an empty waveform")
    peak = np.abs(w.samples).max()
    if peak == 0:
        return Waveform(w.samples.copy(), w.sample_rate_hz)
    return Waveform(w.samples / peak, w.sample_rate_hz)


def window_samples(sample_rate_hz, frame_length_ms=25.0):
    return int(round(frame_length_ms * sample_rate_hz / 1000.0))


def hop_samples(sample_rate_hz, hop_ms=10.0):
    return int(round(hop_ms * sample_rate_hz / 1000.0))


def num_frames(n_samples, width, hop):
    return (n_samples - width) // hop + 1 if n_samples >= width else 0


def frame_signal(w, frame_length_ms=25.0, hop_ms=10.0):
    """Cut the signal into overlapping rows; a trailing partial window is dropped."""
    width = window_samples(w.sample_rate_hz, frame_length_ms)
    hop = hop_samples(w.sample_rate_hz, hop_ms)
    n = len(w.samples)
    if n < width:
        raise ValueError(f"signal shorter than one window ({n} < {width} samples)")
    s = num_frames(n, width, hop)
    idx = np.arange(s)[:, None] * hop + np.arange(width)[None, :]
    return FrameMatrix(w.samples[idx], w.sample_rate_hz, frame_length_ms, hop_ms)


# ---------------------------------------------------------------- spectral

def fft_size(width):
    n = 1
    while n < width:
        n *= 2
    return n


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges_hz(n_mels, sample_rate_hz):
    """n_mels + 2 edge frequencies equally spaced on the Mel scale from 0 to Nyquist."""
    return mel_to_hz(np.linspace(0.0, hz_to_mel(sample_rate_hz / 2.0), n_mels + 2))


def mel_center_frequencies(n_mels, sample_rate_hz):
    return mel_edges_hz(n_mels, sample_rate_hz)[1:-1]


def mel_filterbank(n_mels, n_fft, sample_rate_hz):
    """Triangular filters with unit peak, shape n_mels x (n_fft // 2 + 1)."""
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    edges = mel_edges_hz(n_mels, sample_rate_hz)
    freqs = np.arange(n_fft // 2 + 1) * sample_rate_hz / n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def power_spectrum(frames):
    frames = np.atleast_2d(frames)
    width = frames.shape[1]
    window = scipy.signal.get_window("hann", width)
    spec = np.fft.rfft(frames * window, n=fft_size(width), axis=1)
    return spec.real ** 2 + spec.imag ** 2


def _frames_and_rate(fm, sample_rate_hz):
    if isinstance(fm, FrameMatrix):
        return fm.frames, fm.sample_rate_hz
    return np.atleast_2d(np.asarray(fm, dtype=np.float64)), sample_rate_hz


def log_mel_spectrogram(fm, n_mels=40, sample_rate_hz=16000):
    """Hann window, power spectrum, Mel filterbank, natural log with a 1e-10 floor."""
    frames, rate = _frames_and_rate(fm, sample_rate_hz)
    pw = power_spectrum(frames)
    fb = mel_filterbank(n_mels, fft_size(frames.shape[1]), rate)
    return SpectralFeatures(np.log(pw @ fb.T + LOG_FLOOR), "log-mel")


def dct2(x, n_keep=None):
    """Orthonormal DCT-II along the last axis, truncated to ``n_keep`` coefficients."""
    out = scipy.fft.dct(np.asarray(x, dtype=np.float64), type=2, norm="ortho", axis=-1)
    return out if n_keep is None else out[..., :n_keep]


def idct3(c):
    """Inverse of :func:`dct2` for untruncated input."""
    return scipy.fft.idct(np.asarray(c, dtype=np.float64), type=2, norm="ortho", axis=-1)


def mfcc(fm, n_mels=40, n_ceps=13, sample_rate_hz=16000):
    if n_ceps > n_mels:
        raise ValueError(f"n_ceps ({n_ceps}) cannot exceed n_mels ({n_mels})")
    logmel = log_mel_spectrogram(fm, n_mels, sample_rate_hz).matrix
    return SpectralFeatures(dct2(logmel, n_ceps), "mfcc")


# ---------------------------------------------------------- standardization

def fit_standardizer(corpus):
    """Per-dimension mean and population std over every frame of every utterance.

    Dimensions whose std falls below 1e-8 get std 1, so they are only centred.
    """
    mats = [getattr(f, "matrix", f) for f in corpus]
    if not mats:
        raise ValueError("cannot fit a standardizer on an empty corpus")
    stacked = np.concatenate([np.atleast_2d(m) for m in mats], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std = np.where(std < STD_FLOOR, 1.0, std)
    return Standardizer(mean, std)


def apply_standardizer(feats, stats):
    if isinstance(feats, SpectralFeatures):
        return SpectralFeatures((feats.matrix - stats.mean) / stats.std, feats.kind, True,
                                stats.mean, stats.std)
    return (np.asarray(feats, dtype=np.float64) - stats.mean) / stats.std
