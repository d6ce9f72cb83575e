"""Experiment configuration: defaults, INI loading and derived sub-configs."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
from dataclasses import dataclass, field
from pathlib import Path

from .contrastive import ContrastiveConfig
from .data import ConfigError, SyntheticConfig
from .model import ModelConfig

ABLATION_FLAGS = ("no_text", "no_stat", "no_knowledge", "no_image", "no_cl",
                  "gru_to_transformer", "word2vec_text")


def _f(section: str, default, **kw):
    if isinstance(default, (list, dict, tuple)):
        return field(default_factory=lambda: default, metadata={"section": section, **kw})
    return field(default=default, metadata={"section": section, **kw})


@dataclass
class ExperimentConfig:
    # data
    source: str = _f("data", "synthetic")  # or "csv"
    csv_path: str = _f("data", "")
    time_column: str = _f("data", "")
    value_columns: tuple[str, ...] = _f("data", ())
    resolution: str = _f("data", "1 hour")
    entity_level: str = _f("data", "user-level")
    n_steps: int = _f("data", 8000)
    n_channels: int = _f("data", 4)
    daily_period: float = _f("data", 24.0)
    weekly_period: float = _f("data", 168.0)
    trend_slope: float = _f("data", 1e-4)
    noise_std: float = _f("data", 0.1)
    data_seed: int = _f("data", 0)
    window_stride: int = _f("data", 1)
    standardize: bool = _f("data", True)
    split_ratios: tuple[float, ...] = _f("data", (0.7, 0.1, 0.2))
    # model
    window: int = _f("model", 480)
    horizons: tuple[int, ...] = _f("model", (24, 96, 192, 336))
    patch_len: int = _f("model", 16)
    patch_stride: int = _f("model", 16)
    embed_dim: int = _f("model", 128)
    heads: int = _f("model", 4)
    text_dim: int = _f("model", 32)
    text_heads: int = _f("model", 4)
    text_pool: int = _f("model", 4)
    group_size: int = _f("model", 8)
    gru_hidden: int = _f("model", 128)
    dropout: float = _f("model", 0.1)
    frozen_seed: int = _f("model", 0)
    # training
    batch_size: int = _f("train", 32)
    lr: float = _f("train", 1e-4)
    epochs: int = _f("train", 10)
    patience: int = _f("train", 5)
    train_fraction: float = _f("train", 1.0)
    seed: int = _f("train", 0)
    # loss
    lambda_rdn: float = _f("loss", 0.1)
    lambda_syn: float = _f("loss", 0.3)
    tau: float = _f("loss", 0.1)
    eta: float = _f("loss", 0.5)
    alpha: tuple[float, ...] = _f("loss", (1.0, 1.0))
    beta: tuple[float, ...] = _f("loss", (1.0, 1.0, 1.0))
    # ablations
    no_text: bool = _f("ablation", False)
    no_stat: bool = _f("ablation", False)
    no_knowledge: bool = _f("ablation", False)
    no_image: bool = _f("ablation", False)
    no_cl: bool = _f("ablation", False)
    gru_to_transformer: bool = _f("ablation", False)
    word2vec_text: bool = _f("ablation", False)

    def validate(self) -> None:
        if self.source not in ("synthetic", "csv"):
            raise ConfigError(f"unknown data source {self.source!r}")
        if self.source == "csv" and not self.csv_path:
            raise ConfigError("csv source needs csv_path")
        if self.batch_size < 1 or self.epochs < 0 or self.patience < 0:
            raise ConfigError("batch_size >= 1, epochs >= 0 and patience >= 0 are required")
        if not self.lr > 0:
            raise ConfigError("learning rate must be positive")
        if not 0.0 < self.train_fraction <= 1.0:
            raise ConfigError("train_fraction must lie in (0, 1]")
        if not self.horizons:
            raise ConfigError("at least one horizon is required")
        if len(self.alpha) != 2 or len(self.beta) != 3:
            raise ConfigError("alpha needs 2 weights and beta needs 3")
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ConfigError("split_ratios must be three fractions summing to 1")
        self.contrastive().validate()
        self.model_config(self.horizons[0]).validate()

    # -- derived configs ------------------------------------------------------

    def synthetic(self) -> SyntheticConfig:
        return SyntheticConfig(n_steps=self.n_steps, n_channels=self.n_channels,
                               daily_period=self.daily_period, weekly_period=self.weekly_period,
                               trend_slope=self.trend_slope, noise_std=self.noise_std,
                               seed=self.data_seed)

    def contrastive(self) -> ContrastiveConfig:
        lam1, lam2 = (0.0, 0.0) if self.no_cl else (self.lambda_rdn, self.lambda_syn)
        return ContrastiveConfig(tau=self.tau, eta=self.eta, alpha=tuple(self.alpha),
                                 beta=tuple(self.beta), lambda_rdn=lam1, lambda_syn=lam2)

    def model_config(self, horizon: int, n_channels: int | None = None, vocab_size: int = 256) -> ModelConfig:
        return ModelConfig(
            n_channels=n_channels or self.n_channels, window=self.window, horizon=horizon,
            patch_len=self.patch_len, patch_stride=self.patch_stride, embed_dim=self.embed_dim,
            heads=self.heads, text_dim=self.text_dim, text_heads=self.text_heads,
            text_pool=self.text_pool, vocab_size=vocab_size, group_size=self.group_size,
            gru_hidden=self.gru_hidden, dropout=self.dropout,
            image_encoder="transformer" if self.gru_to_transformer else "gru",
            text_encoder="bag" if self.word2vec_text else "causal",
            use_text=not self.no_text, use_image=not self.no_image,
            horizons=tuple(self.horizons), frozen_seed=self.frozen_seed)

    def with_flag(self, flag: str | None) -> "ExperimentConfig":
        if flag is None:
            return dataclasses.replace(self)
        if flag not in ABLATION_FLAGS:
            raise ConfigError(f"unknown ablation flag {flag!r}")
        return dataclasses.replace(self, **{flag: True})

    def enabled_ablations(self) -> list[str]:
        return [f for f in ABLATION_FLAGS if getattr(self, f)]

    def config_hash(self) -> str:
        return hashlib.sha256(to_ini(self).encode("utf-8")).hexdigest()[:16]


# --------------------------------------------------------------------------
# INI round trip


def _parse_value(raw: str, default):
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if isinstance(default, tuple):
        items = [v.strip() for v in raw.split(",") if v.strip()]
        if default and isinstance(default[0], int):
            return tuple(int(v) for v in items)
        if default and isinstance(default[0], float):
            return tuple(float(v) for v in items)
        return tuple(items)
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ", ".join(repr(x) if isinstance(x, float) else str(x) for x in v)
    if isinstance(v, float):
        return repr(v)
    return str(v)


def from_ini_text(text: str, base: ExperimentConfig | None = None) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    cfg = dataclasses.replace(base) if base else ExperimentConfig()
    fields = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
    for section in parser.sections():
        for key, raw in parser.items(section):
            if key not in fields:
                raise ConfigError(f"unknown key {key!r} in section [{section}]")
            want = fields[key].metadata["section"]
            if want != section:
                raise ConfigError(f"key {key!r} belongs in section [{want}], not [{section}]")
            try:
                setattr(cfg, key, _parse_value(raw, getattr(ExperimentConfig(), key)))
            except ValueError as exc:
                raise ConfigError(f"[{section}] {key}: {exc}") from exc
    cfg.validate()
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file {path} does not exist")
    return from_ini_text(path.read_text())


def to_ini(cfg: ExperimentConfig) -> str:
    sections: dict[str, list[str]] = {}
    for f in dataclasses.fields(cfg):
        sections.setdefault(f.metadata["section"], []).append(
            f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    return "\n".join(f"[{s}]\n" + "\n".join(lines) + "\n" for s, lines in sections.items())


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(to_ini(cfg))
