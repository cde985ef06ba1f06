"""Training configuration and the flat key=value config file format.

Files are plain text: one ``key=value`` per line, ``#`` comments, blank
lines ignored. Dotted keys address the nested network config
(``net.base_channels=36``). Serialization is canonical (fixed key order,
fixed float formatting), so a config snapshot embedded in a checkpoint can
be compared textually.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .network import VARIANTS, DsdNetConfig

__all__ = ["TrainConfig", "parse_flat", "format_flat", "config_to_text",
           "config_from_dict", "config_from_text", "load_config",
           "net_fingerprint"]


@dataclass
class TrainConfig:
    """Everything that determines a training run besides the data bytes."""

    net: DsdNetConfig = field(default_factory=DsdNetConfig)
    ablation_variant: str = "full"
    lr_init: float = 2e-4
    lr_min: float = 1e-6
    total_steps: int = 400_000
    batch_size: int = 1
    crop_size: int = 256
    lambda_aux: float = 0.5
    seed: int = 0
    data_dir: str = ""
    eval_dir: str = ""
    checkpoint_every: int = 0
    augment: bool = True
    weight_decay: float = 0.0

    def __post_init__(self):
        if isinstance(self.net, dict):
            self.net = DsdNetConfig(**self.net)
        if self.ablation_variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.ablation_variant!r}")
        if not self.lr_min < self.lr_init:
            raise ValueError("lr_min must be below lr_init")
        if self.total_steps < 0 or self.batch_size < 1:
            raise ValueError("total_steps >= 0 and batch_size >= 1 required")
        # The mosaic crop is packed to half resolution and then downsampled
        # n_scales - 1 times, so it must divide by 2**n_scales.
        stride = 2 ** self.net.n_scales
        if self.crop_size % stride:
            raise ValueError(
                f"crop_size must divide by the network stride {stride}")
        if self.lambda_aux < 0.0:
            raise ValueError("lambda_aux must be nonnegative")


def parse_flat(text):
    """key=value lines -> dict of strings; later keys override earlier."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"line {lineno}: expected key=value, got {raw!r}")
        out[key.strip()] = value.strip()
    return out


def format_flat(d):
    return "".join(f"{k}={v}\n" for k, v in d.items())


def _encode(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _decode(text, like):
    if isinstance(like, bool):
        if text not in ("true", "false"):
            raise ValueError(f"expected true/false, got {text!r}")
        return text == "true"
    if isinstance(like, int):
        return int(text)
    if isinstance(like, float):
        return float(text)
    if isinstance(like, tuple):
        return tuple(int(v) for v in text.split(",") if v)
    return text


def config_to_text(cfg):
    """Canonical flat serialization in dataclass field order."""
    d = {}
    for f in fields(DsdNetConfig):
        d[f"net.{f.name}"] = _encode(getattr(cfg.net, f.name))
    for f in fields(TrainConfig):
        if f.name == "net":
            continue
        d[f.name] = _encode(getattr(cfg, f.name))
    return format_flat(d)


def config_from_dict(d):
    """Build a TrainConfig from flat string keys, rejecting unknown ones."""
    d = dict(d)
    net_kwargs = {}
    for f in fields(DsdNetConfig):
        key = f"net.{f.name}"
        if key in d:
            text = d.pop(key)
            if f.name == "target_params":
                net_kwargs[f.name] = None if text == "none" else int(text)
            else:
                net_kwargs[f.name] = _decode(text, getattr(DsdNetConfig(),
                                                           f.name))
    defaults = TrainConfig()
    kwargs = {}
    for f in fields(TrainConfig):
        if f.name == "net":
            continue
        if f.name in d:
            kwargs[f.name] = _decode(d.pop(f.name), getattr(defaults, f.name))
    if d:
        raise ValueError(f"unknown config keys: {sorted(d)}")
    return TrainConfig(net=DsdNetConfig(**net_kwargs), **kwargs)


def config_from_text(text):
    return config_from_dict(parse_flat(text))


def load_config(path):
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read())


def net_fingerprint(text):
    """The architecture-determining subset of a config snapshot: net.*
    plus the ablation variant. Checkpoint loading compares these."""
    d = parse_flat(text)
    return {k: v for k, v in d.items()
            if k.startswith("net.") or k == "ablation_variant"}
