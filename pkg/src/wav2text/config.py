"""Run configuration.

The on-disk form is UTF-8 text, one ``section.key = value`` per line,
``#`` comments allowed.  Strings are written JSON-quoted, tuples as
comma-separated values.  Unknown keys and unparsable values are errors.
"""

import dataclasses
import hashlib
import json
import typing
from dataclasses import dataclass, field


class ConfigError(ValueError):
    """The config text does not match the schema."""


@dataclass
class DspConfig:
    sample_rate: int = 16000
    frame_ms: float = 25.0
    hop_ms: float = 10.0
    n_mels: int = 40
    n_ceps: int = 13


@dataclass
class RawEncoderConfig:
    conv_channels: tuple = (128, 128, 128, 128)
    conv_filters: tuple = (80, 25, 10, 5)
    conv_strides: tuple = (4, 2, 1, 1)
    nin_channels: tuple = (128, 128, 128)
    head_hidden: int = 128
    leakiness: float = 0.1
    init: str = "he"

    @property
    def output_dim(self):
        return self.nin_channels[-1]


@dataclass
class Seq2SeqConfig:
    lstm_units: int = 256
    lstm_layers: int = 3
    embed_dim: int = 128
    decoder_units: int = 512
    attention: str = "mlp"
    attention_hidden: int = 256


@dataclass
class PretrainConfig:
    target: str = "multi"
    epochs: int = 20
    steps: int = 0
    learning_rate: float = 0.01
    momentum: float = 0.9
    batch_size: int = 1
    clip_norm: float = 10.0


@dataclass
class TrainConfig:
    learning_rate: float = 0.0005
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    freeze_epochs: int = 10
    total_epochs: int = 40
    batch_size: int = 1
    clip_norm: float = 0.0
    shuffle: bool = True


@dataclass
class DecodeConfig:
    beam_size: int = 5
    max_len: int = 0


@dataclass
class CorpusConfig:
    count: int = 100
    min_len: int = 3
    max_len: int = 8
    symbols: str = "abcdefghijklmnopqrstuvwxyz"
    motif_ms: float = 100.0
    base_hz: float = 200.0
    step_hz: float = 30.0
    harmonics: int = 0
    noise_db: float = -30.0


@dataclass
class PathsConfig:
    workdir: str = "runs"


@dataclass
class RunConfig:
    seed: int = 0
    dsp: DspConfig = field(default_factory=DspConfig)
    rawenc: RawEncoderConfig = field(default_factory=RawEncoderConfig)
    seq2seq: Seq2SeqConfig = field(default_factory=Seq2SeqConfig)
    pretrain: PretrainConfig = field(default_factory=PretrainConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    decode: DecodeConfig = field(default_factory=DecodeConfig)
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    def validate(self):
        r = self.rawenc
        if not (len(r.conv_channels) == len(r.conv_filters) == len(r.conv_strides)):
            raise ConfigError("rawenc.conv_channels/conv_filters/conv_strides lengths differ")
        if not r.nin_channels:
            raise ConfigError("rawenc.nin_channels must not be empty")
        if r.init not in ("he", "glorot"):
            raise ConfigError(f"rawenc.init must be he or glorot, got {r.init!r}")
        if not 0.0 <= r.leakiness < 1.0:
            raise ConfigError("rawenc.leakiness must be in [0, 1)")
        if self.seq2seq.attention not in ("dot", "bilinear", "mlp"):
            raise ConfigError(f"seq2seq.attention must be dot, bilinear or mlp, got {self.seq2seq.attention!r}")
        if self.seq2seq.attention == "dot" and 2 * self.seq2seq.lstm_units != self.seq2seq.decoder_units:
            raise ConfigError("dot attention needs decoder_units == 2 * lstm_units")
        if self.pretrain.target not in ("fbank", "mfcc", "multi"):
            raise ConfigError(f"pretrain.target must be fbank, mfcc or multi, got {self.pretrain.target!r}")
        if self.dsp.n_ceps > self.dsp.n_mels:
            raise ConfigError("dsp.n_ceps cannot exceed dsp.n_mels")
        if self.decode.beam_size < 1:
            raise ConfigError("decode.beam_size must be >= 1")
        if self.train.freeze_epochs > self.train.total_epochs:
            raise ConfigError("train.freeze_epochs cannot exceed train.total_epochs")
        if self.corpus.min_len < 1 or self.corpus.max_len < self.corpus.min_len:
            raise ConfigError("corpus length range is empty")
        return self

    # ----------------------------------------------------------- text form

    def to_text(self):
        lines = [f"seed = {self.seed}"]
        for f in dataclasses.fields(self):
            if f.name == "seed":
                continue
            section = getattr(self, f.name)
            for sf in dataclasses.fields(section):
                lines.append(f"{f.name}.{sf.name} = {_format(getattr(section, sf.name))}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text, base=None):
        cfg = base if base is not None else cls()
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value'")
            key, value = (p.strip() for p in line.split("=", 1))
            cfg.set(key, value, where=f"line {lineno}")
        return cfg.validate()

    def set(self, key, value, where="override"):
        """Set ``section.key`` (or ``seed``) from its text form."""
        if key == "seed":
            self.seed = _parse(value, int, key, where)
            return
        if "." not in key:
            raise ConfigError(f"{where}: unknown key {key!r}")
        sec_name, name = key.split(".", 1)
        section = getattr(self, sec_name, None)
        if section is None or not dataclasses.is_dataclass(section):
            raise ConfigError(f"{where}: unknown section {sec_name!r}")
        hints = typing.get_type_hints(type(section))
        if name not in hints:
            raise ConfigError(f"{where}: unknown key {key!r}")
        setattr(section, name, _parse(value, hints[name], key, where))

    def fingerprint(self, scope="model"):
        """SHA-256 over the sections that determine parameter shapes."""
        # init only affects fresh parameters, not their shapes or meaning
        names = {"model": ("dsp", "rawenc", "seq2seq"), "trunk": ("dsp", "rawenc")}[scope]
        text = "".join(
            f"{n}.{sf.name}={_format(getattr(getattr(self, n), sf.name))}\n"
            for n in names for sf in dataclasses.fields(getattr(self, n)) if sf.name != "init"
        )
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _format(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(str(v) for v in value)
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _parse(text, typ, key, where):
    try:
        if typ is bool:
            low = text.lower()
            if low not in ("true", "false"):
                raise ValueError(text)
            return low == "true"
        if typ is int:
            return int(text)
        if typ is float:
            return float(text)
        if typ is str:
            return json.loads(text) if text.startswith('"') else text
        if typ is tuple:
            return tuple(int(v) for v in text.split(",") if v.strip())
    except (ValueError, json.JSONDecodeError):
        pass
    raise ConfigError(f"{where}: cannot parse {key} = {text!r} as {typ.__name__}")


def load_config(path=None, overrides=()):
    cfg = RunConfig()
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            cfg = RunConfig.from_text(fh.read())
    for key, value in overrides:
        cfg.set(key, value)
    return cfg.validate()


def save_config(cfg, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(cfg.to_text())
