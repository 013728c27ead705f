"""Training configuration: defaults, presets, file loading and flag overrides."""

from __future__ import annotations

import dataclasses
import json
import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional

import yaml

from .decoder import ModelConfig
from .losses import BodyLossWeights, EdgeLossParams
from .windows import ConfigurationError

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    seed: int = 0
    # optimisation
    lr: float = 0.01
    weight_decay: float = 0.01
    batch_size: int = 8
    epochs: int = 20
    plateau_factor: float = 0.5
    plateau_patience: int = 5
    grad_clip: float = 0.0
    # objective
    lambda1: float = 0.6
    lambda2: float = 0.4
    gamma: float = 0.2
    edge_lambda: float = 1.1
    edge_eta: float = 0.3
    loss_reduction: str = "mean"
    # model
    img_size: int = 224
    edge_channels: int = 24
    body_channels: int = 24
    depths: List[int] = dataclasses.field(default_factory=lambda: [2, 2, 2, 2])
    heads: List[int] = dataclasses.field(default_factory=lambda: [1, 2, 4, 8])
    window: int = 7
    fusion_window: int = 7
    use_lcaf: bool = True
    fuse_into_body: bool = False
    # data
    dataset: str = "synthetic"
    data_dir: Optional[str] = None
    n_train: int = 200
    n_val: int = 40
    n_test: int = 40
    synth_seed: int = 1000
    augment: bool = True
    gray_world: bool = True
    # output
    out_dir: str = "runs/default"
    save_checkpoints: bool = True

    def validate(self) -> "TrainConfig":
        positive = ("lr", "batch_size", "epochs", "img_size", "edge_channels", "body_channels",
                    "window", "fusion_window", "plateau_patience", "edge_lambda")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("weight_decay", "lambda1", "lambda2", "gamma", "grad_clip",
                     "n_train", "n_val", "n_test"):
            if getattr(self, name) < 0:
                raise ConfigurationError(f"{name} must be nonnegative, got {getattr(self, name)}")
        if not 0 < self.plateau_factor < 1:
            raise ConfigurationError("plateau_factor must lie in (0, 1)")
        if not 0 <= self.edge_eta <= 1:
            raise ConfigurationError("edge_eta must lie in [0, 1]")
        if self.loss_reduction not in ("mean", "sum"):
            raise ConfigurationError("loss_reduction must be 'mean' or 'sum'")
        if self.dataset not in ("synthetic", "directory"):
            raise ConfigurationError("dataset must be 'synthetic' or 'directory'")
        if self.dataset == "directory" and not self.data_dir:
            raise ConfigurationError("dataset 'directory' requires data_dir")
        if self.n_train == 0 and self.dataset == "synthetic":
            raise ConfigurationError("n_train must be positive for synthetic data")
        self.model_config()
        return self

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            img_size=self.img_size, edge_channels=self.edge_channels,
            body_channels=self.body_channels, depths=tuple(self.depths), heads=tuple(self.heads),
            window=self.window, fusion_window=self.fusion_window,
            use_lcaf=self.use_lcaf, fuse_into_body=self.fuse_into_body,
        )

    def loss_weights(self) -> BodyLossWeights:
        return BodyLossWeights(self.lambda1, self.lambda2, self.gamma)

    def edge_params(self) -> EdgeLossParams:
        return EdgeLossParams(eta=self.edge_eta, lam=self.edge_lambda, reduction=self.loss_reduction)

    def to_dict(self) -> Dict[str, Any]:
        return dataclasses.asdict(self)


PRESETS: Dict[str, Dict[str, Any]] = {
    "desk": {},
    "full": {
        "batch_size": 24, "epochs": 80, "edge_channels": 96, "body_channels": 96,
        "heads": [3, 6, 12, 24],
    },
}


def field_names() -> List[str]:
    return [f.name for f in fields(TrainConfig)]


def _coerce(name: str, value: Any) -> Any:
    default = getattr(TrainConfig(), name)
    if value is None:
        return None
    if isinstance(default, bool):
        if isinstance(value, str):
            low = value.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ConfigurationError(f"{name} expects a boolean, got {value!r}")
            return low in ("true", "1", "yes")
        return bool(value)
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v for v in value.replace(",", " ").split() if v]
        try:
            return [int(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigurationError(f"{name} expects a list of integers, got {value!r}") from None
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError):
        raise ConfigurationError(f"{name} expects {type(default).__name__}, got {value!r}") from None
    return str(value)


def merge(base: TrainConfig, values: Mapping[str, Any]) -> TrainConfig:
    valid = field_names()
    unknown = sorted(set(values) - set(valid))
    if unknown:
        raise ConfigurationError(
            f"unknown config key(s) {', '.join(unknown)}; valid keys: {', '.join(valid)}"
        )
    return dataclasses.replace(base, **{k: _coerce(k, v) for k, v in values.items()})


def load_file(path) -> Dict[str, Any]:
    text = Path(path).read_text()
    data = yaml.safe_load(text) if text.strip() else {}
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: top level must be a mapping")
    return data


def parse_config(path=None, overrides: Mapping[str, Any] | None = None,
                 preset: str = "desk") -> TrainConfig:
    """Defaults <- preset <- config file <- explicit overrides, then validation."""
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    cfg = merge(TrainConfig(), PRESETS[preset])
    if path is not None:
        cfg = merge(cfg, load_file(path))
    if overrides:
        cfg = merge(cfg, {k: v for k, v in overrides.items() if v is not None})
    cfg.validate()
    logger.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    return cfg
