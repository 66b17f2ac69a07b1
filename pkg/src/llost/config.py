"""Run configuration: dataclasses plus strict JSON loading."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path

LIKELIHOODS = ("nb", "bernoulli")
MODELS = ("llost", "cvae")


class ConfigError(ValueError):
    """Invalid or unreadable configuration (maps to CLI exit code 2)."""


@dataclass
class TrainConfig:
    model: str = "llost"
    likelihood: str = "bernoulli"
    shared_dim: int = 200
    use_label: bool = True
    epochs: int = 35
    batch_size: int = 32
    lr: float = 1e-3
    lambda_recon_M: float = 1.0
    lambda_recon_I: float = 1.0
    lambda_mmd: float = 1.0
    lambda_kl: float = 1.0
    # None disables early stopping
    patience: int | None = 10
    seed: int = 0
    kl_samples: int = 1
    mmd_bandwidth: float | None = None
    eval_draws: int = 10
    map_steps: int = 24
    map_blocks: int = 3
    prior_steps: int = 12
    prior_blocks: int = 2
    flow_hidden: int = 128
    # per-block bound on the log-scale of the shared map
    map_scale_clamp: float = 2.0
    # global gradient-norm cap; None disables clipping
    grad_clip: float | None = 100.0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ConfigError(f"model: expected one of {MODELS}, got {self.model!r}")
        if self.likelihood not in LIKELIHOODS:
            raise ConfigError(f"likelihood: expected one of {LIKELIHOODS}, got {self.likelihood!r}")
        for name in ("epochs", "batch_size", "shared_dim", "kl_samples", "eval_draws",
                     "map_steps", "map_blocks", "prior_steps", "prior_blocks", "flow_hidden"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                raise ConfigError(f"{name}: expected a positive integer, got {v!r}")
        if not self.lr > 0:
            raise ConfigError(f"lr: must be positive, got {self.lr!r}")
        for name in ("lambda_recon_M", "lambda_recon_I", "lambda_mmd", "lambda_kl"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be nonnegative")
        if self.patience is not None and self.patience < 1:
            raise ConfigError("patience: must be a positive integer or null")
        if not self.map_scale_clamp > 0:
            raise ConfigError("map_scale_clamp: must be positive")
        if self.grad_clip is not None and not self.grad_clip > 0:
            raise ConfigError("grad_clip: must be positive or null")
        if self.mmd_bandwidth is not None and self.mmd_bandwidth <= 0:
            raise ConfigError("mmd_bandwidth: must be positive or null")

    def replace(self, **kw) -> "TrainConfig":
        return dataclasses.replace(self, **kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def parse_json(text: str, source: str = "<config>") -> dict:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    return data


def from_dict(cls, data: dict, source: str = "<config>"):
    """Build a config dataclass, rejecting unknown or mistyped fields by name."""
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{source}: unknown field(s) {', '.join(unknown)}")
    try:
        return cls(**data)
    except ConfigError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from None


def load_json(path: str | Path) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_json(text, str(path))
