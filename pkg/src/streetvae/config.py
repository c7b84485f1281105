"""Pipeline configuration: a flat key=value file with # comments.

Every key is also a CLI flag (the flag wins). Unknown keys are rejected
and every numeric field is validated against its documented range.
"""
from __future__ import annotations

from dataclasses import dataclass, fields
from typing import Optional

DEFAULT_OVERPASS_URL = "https://overpass-api.de/api/interpreter"


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    # data processing
    box_half_width_m: float = 500.0  # 1 km x 1 km study box
    merge_threshold_m: float = 10.0
    min_population: int = 1000
    n_cap: int = 512
    # node model
    d_model: int = 128
    layers: int = 4
    heads: int = 8
    d_ff: int = 512
    max_nodes: int = 512
    dropout: float = 0.0
    feature_mode: str = "mean"
    node_epochs: int = 20
    node_batch: int = 8
    node_lr: float = 1e-3
    # graph autoencoder
    hidden_dim: int = 64
    latent_dim: int = 16
    vgae_epochs: int = 200
    vgae_lr: float = 0.01
    # embeddings / clustering
    embed_dim: int = 32
    k_clusters: int = 7
    # generation
    temperature: float = 1.0
    edge_threshold: float = 0.5
    edge_mode: str = "threshold"
    # shared
    train_fraction: float = 0.8
    seed: int = 0
    circuity_mode: str = "ratio_of_sums"
    orientation_weighted: bool = True
    include_boundary_blocks: bool = True
    overpass_url: str = DEFAULT_OVERPASS_URL

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        checks = [
            (self.box_half_width_m > 0, "box_half_width_m must be > 0"),
            (self.merge_threshold_m >= 0, "merge_threshold_m must be >= 0"),
            (self.min_population >= 0, "min_population must be >= 0"),
            (self.n_cap >= 2, "n_cap must be >= 2"),
            (self.d_model >= 1, "d_model must be >= 1"),
            (self.layers >= 1, "layers must be >= 1"),
            (self.heads >= 1 and self.d_model % self.heads == 0, "heads must divide d_model"),
            (self.d_ff >= 1, "d_ff must be >= 1"),
            (self.max_nodes >= 1, "max_nodes must be >= 1"),
            (self.dropout == 0.0, "dropout is fixed at 0.0"),
            (self.feature_mode in ("mean", "y_token", "concat_halves"), "bad feature_mode"),
            (self.node_epochs >= 0, "node_epochs must be >= 0"),
            (self.node_batch >= 1, "node_batch must be >= 1"),
            (self.node_lr > 0, "node_lr must be > 0"),
            (self.hidden_dim >= 1, "hidden_dim must be >= 1"),
            (self.latent_dim >= 1, "latent_dim must be >= 1"),
            (self.vgae_epochs >= 0, "vgae_epochs must be >= 0"),
            (self.vgae_lr > 0, "vgae_lr must be > 0"),
            (self.embed_dim >= 1, "embed_dim must be >= 1"),
            (self.k_clusters >= 1, "k_clusters must be >= 1"),
            (self.temperature > 0, "temperature must be > 0"),
            (0.0 <= self.edge_threshold <= 1.0, "edge_threshold must be in [0, 1]"),
            (self.edge_mode in ("threshold", "bernoulli"), "bad edge_mode"),
            (0.0 < self.train_fraction < 1.0, "train_fraction must be in (0, 1)"),
            (self.seed >= 0, "seed must be >= 0"),
            (self.circuity_mode in ("ratio_of_sums", "mean_of_ratios"), "bad circuity_mode"),
        ]
        for ok, message in checks:
            if not ok:
                raise ConfigError(message)

    @property
    def val_fraction(self) -> float:
        return 1.0 - self.train_fraction


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(name: str, raw: str):
    kind = _FIELD_TYPES[name]
    text = raw.strip()
    if kind in ("bool", bool):
        if text.lower() in ("true", "1", "yes", "on"):
            return True
        if text.lower() in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"{name}: expected a boolean, got '{raw}'")
    if kind in ("int", int):
        try:
            return int(text)
        except ValueError as e:
            raise ConfigError(f"{name}: expected an integer, got '{raw}'") from e
    if kind in ("float", float):
        try:
            return float(text)
        except ValueError as e:
            raise ConfigError(f"{name}: expected a number, got '{raw}'") from e
    return text


def parse_config_text(text: str) -> dict:
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, raw = (part.strip() for part in stripped.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        values[key] = _coerce(key, raw)
    return values


def load_config(path: Optional[str] = None, overrides: Optional[dict] = None) -> PipelineConfig:
    """Defaults, then config file values, then explicit overrides."""
    values: dict = {}
    if path is not None:
        with open(path, "r", encoding="utf-8") as fh:
            values.update(parse_config_text(fh.read()))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key '{key}'")
        values[key] = val
    return PipelineConfig(**values)


def self_test(cfg: Optional[PipelineConfig] = None) -> list[tuple[str, bool, str]]:
    """Assert the pipeline constants the defaults are anchored to."""
    c = cfg or PipelineConfig()
    checks = [
        ("merge_threshold_10m", c.merge_threshold_m == 10.0, f"{c.merge_threshold_m}"),
        ("box_1km", 2 * c.box_half_width_m == 1000.0, f"{2 * c.box_half_width_m}"),
        ("population_floor_1000", c.min_population == 1000, f"{c.min_population}"),
        ("split_80_20", abs(c.train_fraction - 0.8) < 1e-12, f"{c.train_fraction}"),
        ("node_features_128", c.d_model == 128, f"{c.d_model}"),
        ("kmeans_k_7", c.k_clusters == 7, f"{c.k_clusters}"),
    ]
    return checks
