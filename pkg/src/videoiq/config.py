"""Training configuration and its key=value file format.

Sections map onto the dataclasses below: ``[teacher]``, ``[stage1]``,
``[stage2]``, ``[quant]``, ``[data]``, ``[recognizer]``, ``[policy]`` and
``[general]``. Tuple fields are comma separated; per-precision maps are
written ``32:0.01,4:0.01,2:0.005``.
"""
from __future__ import annotations

import configparser
import dataclasses
import json
import types
import typing
from dataclasses import dataclass, field

from .data import SyntheticSpec
from .losses import LossWeights
from .policy import PolicyConfig, TemperatureSchedule
from .recognizer import RecognizerConfig


class ConfigError(ValueError):
    pass


@dataclass
class StageConfig:
    epochs: int
    lr: float
    weight_decay: float = 5e-4
    momentum: float = 0.9
    batch_size: int = 16
    lr_step: int = 0  # epochs between 10x decays; 0 disables
    lr_gamma: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size <= 0:
            raise ConfigError("epochs must be >= 0 and batch_size > 0")


@dataclass
class QuantConfig:
    precisions: tuple[int, ...] = (32, 4, 2)
    code_bits: int = 8
    alpha_init: float = 4.0
    alpha_lr: dict[int, float] = field(default_factory=lambda: {32: 0.01, 4: 0.01, 2: 0.01})
    alpha_wd: dict[int, float] = field(default_factory=lambda: {32: 5e-4, 4: 5e-4, 2: 5e-3})

    def check(self) -> None:
        for b in self.precisions:
            if b not in self.alpha_lr or b not in self.alpha_wd:
                raise ConfigError(f"missing clip-value lr/wd for precision {b}")


@dataclass
class PolicyStageConfig(StageConfig):
    loss_weights: LossWeights = LossWeights()
    temperature: TemperatureSchedule = TemperatureSchedule()
    grad_clip: float = 5.0
    # the policy trunk starts from weights fit to the recognition task
    pretrain_epochs: int = 5
    pretrain_lr: float = 0.05
    # loss units per recognizer FLOP; 0 expresses cost as a fraction of the
    # full-precision video cost
    efficiency_scale: float = 0.0
    use_kd: bool = True
    squared_balance: bool = False
    optimizer: str = "sgd"  # "sgd" or "adam"

    def __post_init__(self):
        super().__post_init__()
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; expected 'sgd' or 'adam'")


@dataclass
class DataConfig:
    train_videos: int = 400
    test_videos: int = 100
    train_seed: int = 1
    test_seed: int = 2
    # stage 2 trains on fresh videos: the recognizer fits its own training
    # videos almost perfectly, which would hide what the policy should learn
    policy_videos: int = 400
    policy_seed: int = 3
    spec: SyntheticSpec = SyntheticSpec()

    def train_spec(self) -> SyntheticSpec:
        return self.spec.split(self.train_videos, self.train_seed)

    def test_spec(self) -> SyntheticSpec:
        return self.spec.split(self.test_videos, self.test_seed)

    def policy_spec(self) -> SyntheticSpec:
        return self.spec.split(self.policy_videos, self.policy_seed)


@dataclass
class TrainConfig:
    teacher: StageConfig = field(default_factory=lambda: StageConfig(epochs=15, lr=0.05, lr_step=10))
    stage1: StageConfig = field(default_factory=lambda: StageConfig(epochs=30, lr=0.005, lr_step=20))
    # toy preset: weak entropy term and no distillation (see README)
    stage2: PolicyStageConfig = field(default_factory=lambda: PolicyStageConfig(
        epochs=20, lr=0.003, weight_decay=0.0, lr_step=0, optimizer="adam", loss_weights=LossWeights(w3=0.01),
        use_kd=False, pretrain_epochs=10, pretrain_lr=0.01))
    quant: QuantConfig = field(default_factory=QuantConfig)
    data: DataConfig = field(default_factory=DataConfig)
    recognizer: RecognizerConfig = RecognizerConfig()
    policy: PolicyConfig = PolicyConfig()
    seed: int = 0

    def recognizer_config(self, precisions=None) -> RecognizerConfig:
        spec = self.data.spec
        return dataclasses.replace(
            self.recognizer,
            num_classes=spec.num_classes,
            input_size=spec.frame_size,
            precisions=tuple(precisions or self.quant.precisions),
            code_bits=self.quant.code_bits,
            alpha_init=self.quant.alpha_init,
        )

    def policy_config(self, num_actions: int) -> PolicyConfig:
        return dataclasses.replace(self.policy, input_size=self.data.spec.policy_size, num_actions=num_actions)

    def to_dict(self) -> dict:
        return _to_plain(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return _from_plain(cls, d)


# ----------------------------------------------------------------------
# (de)serialization helpers
# ----------------------------------------------------------------------


def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _to_plain(v) for k, v in obj.items()}
    if isinstance(obj, tuple):
        return [_to_plain(v) for v in obj]
    return obj


def _hints(cls):
    return typing.get_type_hints(cls)


def _is_union(tp) -> bool:
    return typing.get_origin(tp) in (typing.Union, types.UnionType)


def _from_plain(tp, value):
    origin = typing.get_origin(tp)
    if dataclasses.is_dataclass(tp):
        hints = _hints(tp)
        kwargs = {k: _from_plain(hints[k], v) for k, v in value.items() if k in hints}
        return tp(**kwargs)
    if origin is tuple:
        (inner, *_rest) = typing.get_args(tp)
        return tuple(_from_plain(inner, v) for v in value)
    if origin is dict:
        kt, vt = typing.get_args(tp)
        return {_from_plain(kt, k): _from_plain(vt, v) for k, v in value.items()}
    if _is_union(tp):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return None if value is None else _from_plain(args[0], value)
    if tp in (int, float, str):
        return tp(value)
    if tp is bool:
        return value if isinstance(value, bool) else str(value).lower() in ("1", "true", "yes", "on")
    return value


def _parse_scalar(tp, text: str):
    text = text.strip()
    origin = typing.get_origin(tp)
    if origin is tuple:
        (inner, *_rest) = typing.get_args(tp)
        return tuple(_parse_scalar(inner, t) for t in text.split(",") if t.strip())
    if origin is dict:
        kt, vt = typing.get_args(tp)
        out = {}
        for item in text.split(","):
            if not item.strip():
                continue
            k, _, v = item.partition(":")
            out[_parse_scalar(kt, k)] = _parse_scalar(vt, v)
        return out
    if _is_union(tp):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        return None if text.lower() in ("none", "") else _parse_scalar(args[0], text)
    if tp is bool:
        return text.lower() in ("1", "true", "yes", "on")
    if tp is float:
        return float(text)
    if tp is int:
        return int(text)
    return text


SECTION_PATHS = {
    "general": (),
    "teacher": ("teacher",),
    "stage1": ("stage1",),
    "stage2": ("stage2",),
    "quant": ("quant",),
    "data": ("data",),
    "recognizer": ("recognizer",),
    "policy": ("policy",),
}


def set_value(cfg: TrainConfig, dotted: str, text: str) -> TrainConfig:
    """Return ``cfg`` with the field at ``section.key`` (or nested dotted path) set from text.

    Keys not found on the section's dataclass are looked up on its nested
    dataclass fields, so ``data.noise`` reaches ``data.spec.noise`` and
    ``stage2.w1`` reaches ``stage2.loss_weights.w1``.
    """
    return _set_many(cfg, [(dotted, text)])


def _resolve(tp, path, dotted) -> tuple[list[str], object]:
    name, hints = path[0], _hints(tp)
    if len(path) == 1:
        if name in hints:
            return [name], hints[name]
        for fname, ftype in hints.items():
            if dataclasses.is_dataclass(ftype) and name in _hints(ftype):
                return [fname, name], _hints(ftype)[name]
        raise ConfigError(f"unknown config key {dotted!r}")
    if name not in hints or not dataclasses.is_dataclass(hints[name]):
        raise ConfigError(f"unknown config key {dotted!r}")
    rest, leaf = _resolve(hints[name], path[1:], dotted)
    return [name] + rest, leaf


def _set_many(cfg: TrainConfig, items) -> TrainConfig:
    # edit a plain copy and validate once, so coupled fields (widths and
    # strides) can change together
    plain = cfg.to_dict()
    for dotted, text in items:
        parts = dotted.split(".")
        path = list(SECTION_PATHS[parts[0]]) + parts[1:] if parts[0] in SECTION_PATHS else parts
        names, leaf = _resolve(TrainConfig, path, dotted)
        node = plain
        for n in names[:-1]:
            node = node[n]
        try:
            node[names[-1]] = _to_plain(_parse_scalar(leaf, text))
        except ValueError as exc:
            raise ConfigError(f"{dotted}: {exc}") from None
    try:
        return TrainConfig.from_dict(plain)
    except ConfigError:
        raise
    except (ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path, overrides: typing.Iterable[str] = ()) -> TrainConfig:
    """Read a key=value config file, then apply ``section.key=value`` overrides."""
    parser = configparser.ConfigParser(delimiters=("=",), interpolation=None)
    parser.optionxform = str
    with open(path) as fh:
        text = fh.read()
    if not text.lstrip().startswith("["):
        text = "[general]\n" + text
    parser.read_string(text)
    items = []
    for section in parser.sections():
        if section not in SECTION_PATHS:
            raise ConfigError(f"unknown section [{section}]")
        items += [(f"{section}.{key}", value) for key, value in parser.items(section)]
    return _set_many(TrainConfig(), items + _split_overrides(overrides))


def _split_overrides(overrides: typing.Iterable[str]) -> list[tuple[str, str]]:
    out = []
    for item in overrides:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"override {item!r} is not key=value")
        out.append((key.strip(), value))
    return out


def apply_overrides(cfg: TrainConfig, overrides: typing.Iterable[str]) -> TrainConfig:
    items = _split_overrides(overrides)
    return _set_many(cfg, items) if items else cfg


def dump_config(cfg: TrainConfig) -> str:
    """Render ``cfg`` in the key=value file format (round-trips via load_config)."""
    lines = [f"[general]", f"seed = {cfg.seed}"]
    for section, path in SECTION_PATHS.items():
        if not path:
            continue
        obj = getattr(cfg, path[0])
        lines.append(f"\n[{section}]")
        lines += _dump_fields(obj)
    return "\n".join(lines) + "\n"


def _dump_fields(obj, prefix=""):
    out = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if dataclasses.is_dataclass(v):
            out += _dump_fields(v, prefix)
        elif isinstance(v, dict):
            out.append(f"{prefix}{f.name} = " + ",".join(f"{k}:{x}" for k, x in v.items()))
        elif isinstance(v, tuple):
            out.append(f"{prefix}{f.name} = " + ",".join(str(x) for x in v))
        else:
            out.append(f"{prefix}{f.name} = {v}")
    return out
