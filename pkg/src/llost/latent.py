"""Diagonal Gaussian posteriors shared by both encoders."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch

LOG_VAR_MIN, LOG_VAR_MAX = -10.0, 10.0


@dataclass
class GaussianPosterior:
    mean: torch.Tensor
    log_var: torch.Tensor

    @classmethod
    def from_raw(cls, mean: torch.Tensor, raw_log_var: torch.Tensor) -> "GaussianPosterior":
        return cls(mean, raw_log_var.clamp(LOG_VAR_MIN, LOG_VAR_MAX))

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def rsample(self, generator: torch.Generator | None = None) -> torch.Tensor:
        eps = torch.randn(self.mean.shape, generator=generator, dtype=self.mean.dtype)
        return self.mean + torch.exp(0.5 * self.log_var) * eps

    def entropy(self) -> torch.Tensor:
        """Differential entropy per row, ``0.5 * sum(1 + log 2pi + log_var)``."""
        return 0.5 * (1.0 + math.log(2.0 * math.pi) + self.log_var).sum(-1)

    def detach(self) -> "GaussianPosterior":
        return GaussianPosterior(self.mean.detach(), self.log_var.detach())
