"""Run configuration dataclasses and their JSON form.

The JSON layout keeps diffusion schedule parameters under a nested
"diffusion" key; everything else is flat. Unknown keys are rejected so a
typo in a config file fails loudly.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError


@dataclass
class DiffusionConfig:
    steps: int = 10
    beta_min: float = 1e-4
    beta_max: float = 0.02
    kappa: float = 0.1            # road-influence scale: gamma_n = kappa * beta_n
    gamma_sign: float = 1.0       # sign of the road term in the reverse step
    stochastic_reverse: bool = False


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    max_epochs: int = 1000
    iteration_unit: str = "epochs"      # "epochs" or "steps"
    early_stop_patience: int = 30
    lr_halving_start: int = 20
    lr_halving_every: int = 10
    lambda_con: float = 1.0
    eta: float | None = None            # None: 40% of the stability bound
    hidden_dim: int = 32
    gcn_layers: int = 1
    denoiser_hidden: int = 64
    denoiser_emb: int = 16
    leaky_slope: float = 0.2
    self_loops: bool = True
    window: int = 6
    stride: int = 1
    split_ratios: tuple[float, float, float] = (0.7, 0.1, 0.2)
    seed: int = 0
    no_diffusion: bool = False
    no_graph_attention: bool = False
    no_temporal_attention: bool = False
    linear_autoencoder: bool = False
    diffusion: DiffusionConfig = field(default_factory=DiffusionConfig)

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("lr, batch_size, and max_epochs must be positive")
        if self.iteration_unit not in ("epochs", "steps"):
            raise ConfigError(f"iteration_unit must be epochs or steps, "
                              f"got {self.iteration_unit!r}")
        if self.early_stop_patience < 1:
            raise ConfigError("early_stop_patience must be positive")
        if self.eta is not None and self.eta < 0:
            raise ConfigError("eta must be non-negative")
        if self.hidden_dim < 1 or self.denoiser_hidden < 1:
            raise ConfigError("hidden dimensions must be positive")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["split_ratios"] = list(self.split_ratios)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        diff_data = data.pop("diffusion", {})
        known_diff = {f.name for f in dataclasses.fields(DiffusionConfig)}
        bad = set(diff_data) - known_diff
        if bad:
            raise ConfigError(f"unknown diffusion config keys: {sorted(bad)}")
        known = {f.name for f in dataclasses.fields(cls)} - {"diffusion"}
        bad = set(data) - known
        if bad:
            raise ConfigError(f"unknown config keys: {sorted(bad)}")
        if "split_ratios" in data:
            data["split_ratios"] = tuple(data["split_ratios"])
        return cls(diffusion=DiffusionConfig(**diff_data), **data)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))
