"""Flat key=value run configuration shared by every command.

One file drives the whole pipeline: model size, synthetic data recipe,
optimizer settings, and artifact paths. The format is plain text, one
`key = value` per line, `#` comments, so configs stay diffable. Unknown
keys are rejected rather than ignored; a typo must not silently fall
back to a default.

Grouped values use commas, per-class groups are separated by
semicolons: `class_channels = 4,5,6,7;0,1,2,3` gives class 0 the first
group and class 1 the second.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .dynamic import DEFAULT_KERNEL_SIZES
from .graph import read_positions
from .model import ModelConfig
from .spectral import CANONICAL_MU_HZ
from .training import DEFAULT_SYNTHETIC, SyntheticSpec, TrainConfig

__all__ = [
    "ConfigError",
    "RunConfig",
    "parse_config",
    "load_config",
    "config_text",
    "model_config",
    "synthetic_spec",
    "train_config",
]


class ConfigError(ValueError):
    """Invalid configuration; carries the offending key."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass
class RunConfig:
    # model
    embed_dim: int = 128
    n_blocks: int = 6
    heads: int = 8
    n_bands: int = 4
    band_centers_hz: tuple = CANONICAL_MU_HZ
    band_width_hz: float = 2.0
    band_floor_hz: float = 0.1
    kernel_sizes: tuple = DEFAULT_KERNEL_SIZES
    state_dim: int = 1
    k_top: int = 16
    patch: int = 50
    ffn_mult: int = 4
    head_hidden: int = 64
    dropout: float = 0.1
    stoch_depth: float = 0.1
    drop_edge: float = 0.2
    # data
    n_channels: int = 8
    n_classes: int = 4
    t_len: int = 1000
    rate: float = 250.0
    noise_sigma: float = 0.2
    tone_amp: float = DEFAULT_SYNTHETIC.amplitude
    trials_per_class: int = 200
    class_bands: tuple = DEFAULT_SYNTHETIC.class_bands
    class_channels: tuple = DEFAULT_SYNTHETIC.class_channels
    # training
    lr: float = 1e-3
    weight_decay: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    epochs: int = 200
    batch_size: int = 16
    warmup_fraction: float = 0.3
    final_lr: float = 1e-6
    label_smoothing: float = 0.1
    patience: int = 25
    seed: int = 0
    grad_clip: float = 1.0
    val_fraction: float = 0.2
    # paths (empty means "not set"; command-line flags take precedence)
    positions: str = ""
    data_dir: str = ""
    checkpoint: str = ""


_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}


def _parse_scalar(key: str, raw: str, kind: type):
    try:
        if kind is int:
            return int(raw)
        if kind is float:
            return float(raw)
    except ValueError:
        raise ConfigError(key, f"expected {kind.__name__}, got {raw!r}") from None
    return raw


def _parse_value(key: str, raw: str, default):
    if isinstance(default, str):
        return raw
    if isinstance(default, bool):  # before int: bool is an int subtype
        raise ConfigError(key, "boolean keys are not supported")
    if isinstance(default, (int, float)) and not isinstance(default, tuple):
        return _parse_scalar(key, raw, type(default))
    if isinstance(default, tuple):
        if default and isinstance(default[0], tuple):
            elem = type(default[0][0]) if default[0] else float
            groups = []
            for part in raw.split(";"):
                part = part.strip()
                items = [p for p in part.split(",") if p.strip()]
                groups.append(tuple(_parse_scalar(key, p.strip(), elem) for p in items))
            return tuple(groups)
        elem = type(default[0]) if default else float
        items = [p for p in raw.split(",") if p.strip()]
        if not items:
            raise ConfigError(key, "expected at least one value")
        return tuple(_parse_scalar(key, p.strip(), elem) for p in items)
    raise ConfigError(key, "unsupported value type")  # pragma: no cover


def parse_config(text: str) -> RunConfig:
    """Parse key=value text into a validated RunConfig."""
    rc = RunConfig()
    seen = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if not eq:
            raise ConfigError(key or f"line {lineno}", "expected key = value")
        if key not in _FIELDS:
            raise ConfigError(key, "unknown key")
        if key in seen:
            raise ConfigError(key, "duplicate key")
        seen.add(key)
        setattr(rc, key, _parse_value(key, raw, _FIELDS[key].default_factory()
                                      if _FIELDS[key].default is dataclasses.MISSING
                                      else _FIELDS[key].default))
    validate(rc)
    return rc


def load_config(path) -> RunConfig:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError("config", f"cannot read {path}: {exc}") from None
    return parse_config(text)


def validate(rc: RunConfig) -> None:
    """Cross-field checks; every message names the offending key."""
    def positive(key, value, kind="value"):
        if value <= 0:
            raise ConfigError(key, f"{kind} must be positive, got {value}")

    for key in ("embed_dim", "n_blocks", "heads", "n_bands", "k_top", "patch",
                "ffn_mult", "head_hidden", "n_channels", "n_classes", "t_len",
                "trials_per_class", "epochs", "batch_size", "patience", "state_dim"):
        value = getattr(rc, key)
        if key == "epochs":
            if value < 0:
                raise ConfigError(key, f"must be nonnegative, got {value}")
        else:
            positive(key, value)
    for key in ("rate", "lr", "grad_clip", "band_width_hz", "band_floor_hz"):
        positive(key, getattr(rc, key))
    if rc.embed_dim % rc.heads:
        raise ConfigError("heads", f"must divide embed_dim={rc.embed_dim}, got {rc.heads}")
    if rc.t_len < rc.patch:
        raise ConfigError("t_len", f"must cover at least one patch of {rc.patch}")
    if len(rc.band_centers_hz) != rc.n_bands:
        raise ConfigError(
            "band_centers_hz",
            f"{len(rc.band_centers_hz)} centers for n_bands={rc.n_bands}")
    if any(m <= 0 for m in rc.band_centers_hz):
        raise ConfigError("band_centers_hz", "centers must be positive")
    if not rc.kernel_sizes or any(k < 1 for k in rc.kernel_sizes):
        raise ConfigError("kernel_sizes", "need at least one size >= 1")
    if len(rc.class_bands) != rc.n_classes:
        raise ConfigError(
            "class_bands", f"{len(rc.class_bands)} groups for n_classes={rc.n_classes}")
    if len(rc.class_channels) != rc.n_classes:
        raise ConfigError(
            "class_channels",
            f"{len(rc.class_channels)} groups for n_classes={rc.n_classes}")
    nyquist = rc.rate / 2.0
    for group in rc.class_bands:
        for f in group:
            if not 0.0 < f < nyquist:
                raise ConfigError(
                    "class_bands", f"center {f} Hz not inside (0, {nyquist}) Hz")
    for group in rc.class_channels:
        if not group:
            raise ConfigError("class_channels", "every class needs a channel")
        for ch in group:
            if not 0 <= ch < rc.n_channels:
                raise ConfigError(
                    "class_channels", f"channel {ch} outside 0..{rc.n_channels - 1}")
    if rc.noise_sigma < 0:
        raise ConfigError("noise_sigma", "must be nonnegative")
    if rc.tone_amp <= 0:
        raise ConfigError("tone_amp", "must be positive")
    for key in ("dropout", "stoch_depth", "drop_edge"):
        if not 0.0 <= getattr(rc, key) < 1.0:
            raise ConfigError(key, "must lie in [0, 1)")
    if not 0.0 < rc.warmup_fraction < 1.0:
        raise ConfigError("warmup_fraction", "must lie strictly inside (0, 1)")
    if not 0.0 <= rc.label_smoothing < 1.0:
        raise ConfigError("label_smoothing", "must lie in [0, 1)")
    if not 0.0 < rc.val_fraction < 1.0:
        raise ConfigError("val_fraction", "must lie strictly inside (0, 1)")
    if rc.final_lr < 0:
        raise ConfigError("final_lr", "must be nonnegative")
    if rc.weight_decay < 0:
        raise ConfigError("weight_decay", "must be nonnegative")
    for key in ("beta1", "beta2"):
        if not 0.0 <= getattr(rc, key) < 1.0:
            raise ConfigError(key, "must lie in [0, 1)")


def _format_value(value) -> str:
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return ";".join(",".join(repr(v) if isinstance(v, float) else str(v)
                                     for v in group) for group in value)
        return ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    if isinstance(value, float):
        return repr(value)  # shortest exact round-trip
    return str(value)


def config_text(rc: RunConfig) -> str:
    """Render a RunConfig back to the flat format (exact round-trip)."""
    lines = [f"{name} = {_format_value(getattr(rc, name))}" for name in _FIELDS]
    return "\n".join(lines) + "\n"


def model_config(rc: RunConfig, positions: np.ndarray | None = None) -> ModelConfig:
    if positions is None and rc.positions:
        _, positions = read_positions(rc.positions)
        if positions.shape[0] != rc.n_channels:
            raise ConfigError(
                "positions",
                f"file has {positions.shape[0]} electrodes, expected {rc.n_channels}")
    return ModelConfig(
        n_channels=rc.n_channels,
        n_classes=rc.n_classes,
        sample_rate=rc.rate,
        d=rc.embed_dim,
        n_blocks=rc.n_blocks,
        heads=rc.heads,
        patch=rc.patch,
        n_bands=rc.n_bands,
        kernel_sizes=rc.kernel_sizes,
        k_top=rc.k_top,
        ffn_mult=rc.ffn_mult,
        head_hidden=rc.head_hidden,
        dropout=rc.dropout,
        stoch_depth=rc.stoch_depth,
        drop_edge=rc.drop_edge,
        band_mu_hz=rc.band_centers_hz,
        band_sigma_hz=rc.band_width_hz,
        sigma_floor_hz=rc.band_floor_hz,
        init_state_dim=rc.state_dim,
        positions=positions,
    )


def synthetic_spec(rc: RunConfig) -> SyntheticSpec:
    return SyntheticSpec(
        n_classes=rc.n_classes,
        n_channels=rc.n_channels,
        t_len=rc.t_len,
        rate=rc.rate,
        class_bands=rc.class_bands,
        class_channels=rc.class_channels,
        noise_sigma=rc.noise_sigma,
        trials_per_class=rc.trials_per_class,
        amplitude=rc.tone_amp,
    )


def train_config(rc: RunConfig) -> TrainConfig:
    return TrainConfig(
        lr=rc.lr,
        weight_decay=rc.weight_decay,
        beta1=rc.beta1,
        beta2=rc.beta2,
        epochs=rc.epochs,
        batch_size=rc.batch_size,
        warmup_fraction=rc.warmup_fraction,
        final_lr=rc.final_lr,
        label_smoothing=rc.label_smoothing,
        patience=rc.patience,
        seed=rc.seed,
        grad_clip=rc.grad_clip,
        val_fraction=rc.val_fraction,
    )
