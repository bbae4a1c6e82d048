"""Estimator configuration with default hyperparameters per model kind."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

from ..errors import ConfigError

# Epochs, batch size and patience are kept small so fits run in seconds.
DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "ppca": {"q": 19},
    "lof": {"k": 5},
    "ae": {"hidden_dims": [75], "latent_dim": 20, "lr": 0.007},
    "vae": {"hidden_dims": [25, 25, 25], "latent_dim": 10, "lr": 0.001, "beta_warmup_epochs": 10},
    "maf": {"n_layers": 20, "hidden_units": 256, "lr": 0.001, "batch_norm": True},
}

DISPLAY_NAMES = {"ppca": "PPCA", "lof": "LOF", "ae": "AE", "vae": "VAE", "maf": "Flow"}

# label used in timing tables, mirroring the novelty metric of each model
METRIC_LABELS = {
    "ppca": "log_prob",
    "lof": "outlier_score",
    "ae": "reconstr_err",
    "vae": "reconstr_err",
    "maf": "log_prob",
}

TRAINED_KINDS = ("ae", "vae", "maf")

_ALIASES = {"flow": "maf", "autoencoder": "ae"}


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str
    params: dict = field(default_factory=dict)
    name: str = ""
    epochs: int = 30
    batch_size: int = 64
    patience: int = 5
    seed: int = 0

    def __post_init__(self):
        kind = _ALIASES.get(self.kind.lower(), self.kind.lower())
        if kind not in DEFAULT_PARAMS:
            raise ConfigError(f"unknown estimator kind {self.kind!r}; expected one of {sorted(DEFAULT_PARAMS)}")
        object.__setattr__(self, "kind", kind)
        unknown = set(self.params) - set(DEFAULT_PARAMS[kind])
        if unknown:
            raise ConfigError(f"{kind}: unknown hyperparameters {sorted(unknown)}")
        merged = {**DEFAULT_PARAMS[kind], **self.params}
        object.__setattr__(self, "params", merged)
        if not self.name:
            object.__setattr__(self, "name", DISPLAY_NAMES[kind])
        self._validate()

    def _validate(self):
        p = self.params
        if self.kind == "ppca" and int(p["q"]) < 1:
            raise ConfigError("ppca: q must be >= 1")
        if self.kind == "lof" and int(p["k"]) < 1:
            raise ConfigError("lof: k must be >= 1")
        if self.kind in TRAINED_KINDS:
            if not float(p["lr"]) > 0:
                raise ConfigError(f"{self.kind}: lr must be > 0")
            if self.epochs < 1 or self.batch_size < 1 or self.patience < 1:
                raise ConfigError(f"{self.kind}: epochs, batch_size and patience must be >= 1")
        if self.kind in ("ae", "vae"):
            if int(p["latent_dim"]) < 1 or any(int(h) < 1 for h in p["hidden_dims"]):
                raise ConfigError(f"{self.kind}: layer sizes must be >= 1")
        if self.kind == "vae" and int(p["beta_warmup_epochs"]) < 0:
            raise ConfigError("vae: beta_warmup_epochs must be >= 0")
        if self.kind == "maf" and (int(p["n_layers"]) < 1 or int(p["hidden_units"]) < 1):
            raise ConfigError("maf: n_layers and hidden_units must be >= 1")

    @property
    def metric(self) -> str:
        return METRIC_LABELS[self.kind]

    @property
    def deterministic(self) -> bool:
        return self.kind not in TRAINED_KINDS

    def with_seed(self, seed: int) -> EstimatorConfig:
        return EstimatorConfig(self.kind, dict(self.params), self.name, self.epochs, self.batch_size, self.patience, seed)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "name": self.name,
            "params": dict(self.params),
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "patience": self.patience,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> EstimatorConfig:
        d = dict(d)
        if "kind" not in d:
            raise ConfigError("estimator entry needs a 'kind'")
        unknown = set(d) - {"kind", "name", "params", "epochs", "batch_size", "patience", "seed"}
        if unknown:
            raise ConfigError(f"estimator entry has unknown keys {sorted(unknown)}")
        params = d.pop("params", {}) or {}
        return cls(params=dict(params), **d)
