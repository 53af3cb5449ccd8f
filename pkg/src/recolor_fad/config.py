"""Flat ``key = value`` run configuration, snapshotted next to every run's outputs."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from recolor_fad.classifiers import CLASSIFIERS, FUSION_MODES
from recolor_fad.recolor import RecolorConfig
from recolor_fad.training import Hyper, LossConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # data; empty audio dirs default to <protocol dir>/wav
    train_protocol: str = ""
    dev_protocol: str = ""
    eval_protocol: str = ""
    pretrain_protocol: str = ""
    pretrain_dir: str = ""
    train_audio: str = ""
    dev_audio: str = ""
    eval_audio: str = ""
    pretrain_audio: str = ""
    audio_ext: str = ".wav"
    # recolor network
    colors: int = 8
    temperature: float = 0.01
    encoder_channels: str = "16,32,64"
    pam_channels: int = 32
    # losses
    rec_mode: str = "true_rec"
    rec_weight: float = 1.0
    # classifier / fusion
    classifier: str = "lcnn"
    fusion: str = "sub"
    classifier_width: int = 0
    init: str = "scratch"
    # optimization
    lr: float = 1e-4
    batch_size: int = 16
    weight_decay: float = 0.0
    epochs: int = 100
    steps: int = 1000
    patience: int = 10
    cosine: bool = True
    eval_path: str = "test"
    freeze_recolor: bool = False
    detach_cls: bool = False
    class_weighting: bool = False
    grid_every: int = 0
    seed: int = 0
    out_dir: str = "runs/default"

    def recolor(self) -> RecolorConfig:
        widths = tuple(int(c) for c in str(self.encoder_channels).split(","))
        return RecolorConfig(self.colors, self.temperature, widths, self.pam_channels, self.seed)

    def loss(self) -> LossConfig:
        return LossConfig(self.rec_mode, self.rec_weight)

    def hyper(self) -> Hyper:
        return Hyper(lr=self.lr, batch_size=self.batch_size, weight_decay=self.weight_decay,
                     epochs=self.epochs, steps=self.steps, patience=self.patience,
                     cosine=self.cosine, grid_every=self.grid_every, eval_path=self.eval_path,
                     freeze_recolor=self.freeze_recolor, detach_cls=self.detach_cls,
                     class_weighting=self.class_weighting, seed=self.seed)

    def validate(self) -> "RunConfig":
        try:
            self.recolor()
            self.loss()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.classifier not in CLASSIFIERS:
            raise ConfigError(f"classifier must be lcnn, resnet18 or aasist, got {self.classifier!r}")
        if self.fusion not in FUSION_MODES:
            raise ConfigError(f"fusion must be only_rec, add, sub or original, got {self.fusion!r}")
        if self.eval_path not in ("train", "test"):
            raise ConfigError(f"eval_path must be train or test, got {self.eval_path!r}")
        if not (self.init == "scratch" or self.init.startswith("pretrained:")):
            raise ConfigError(f"init must be 'scratch' or 'pretrained:PATH', got {self.init!r}")
        for key in ("batch_size", "epochs", "steps"):
            if getattr(self, key) < 1:
                raise ConfigError(f"{key} must be >= 1")
        if self.lr <= 0:
            raise ConfigError("lr must be > 0")
        return self

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())
        return path

    def updated(self, **kw) -> "RunConfig":
        return RunConfig(**{**{f.name: getattr(self, f.name) for f in fields(self)}, **kw})


_TYPES = {f.name: type(f.default) for f in fields(RunConfig)}


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return str(v)


def coerce(key: str, raw):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    typ = _TYPES[key]
    if not isinstance(raw, str):
        return typ(raw)
    raw = raw.strip()
    try:
        if typ is bool:
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        return typ(raw)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = coerce(key, value)
    return out


def load_config(path=None, **overrides) -> RunConfig:
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: coerce(k, v) for k, v in overrides.items() if v is not None})
    return RunConfig(**values).validate()
