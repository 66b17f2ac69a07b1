"""Count-vector encoder/decoder with Negative-Binomial and Bernoulli heads.

NB convention used throughout::

    P(M = m) = Gamma(m + r) / (Gamma(r) m!) * p**m * (1 - p)**r

so that ``P(M = 0) = (1 - p)**r`` and the occurrence probability of a gene is
``1 - (1 - p)**r``. Mean ``r p / (1 - p)``, variance ``r p / (1 - p)**2``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .latent import GaussianPosterior

Q_CLIP = 1e-7
LOG_R_MAX = 15.0
# numpy's Poisson sampler rejects rates near the int64 range
POISSON_RATE_MAX = 1e12

# Hidden widths and latent size per likelihood.
NB_LAYERS = (1000, 500, 300)
BERNOULLI_LAYERS = (800, 500)


@dataclass
class NBParams:
    """Per-gene NB parameters kept in unconstrained form."""

    log_r: torch.Tensor
    logit_p: torch.Tensor

    @property
    def r(self) -> torch.Tensor:
        return torch.exp(self.log_r)

    @property
    def p(self) -> torch.Tensor:
        return torch.sigmoid(self.logit_p)

    def mean(self) -> torch.Tensor:
        return torch.exp(self.log_r + self.logit_p)

    def log_prob(self, counts: torch.Tensor) -> torch.Tensor:
        """Per-sample NB log-likelihood summed over genes."""
        r = self.r
        ll = (
            torch.lgamma(counts + r) - torch.lgamma(r) - torch.lgamma(counts + 1.0)
            + counts * F.logsigmoid(self.logit_p) + r * F.logsigmoid(-self.logit_p)
        )
        return ll.sum(-1)

    def occurrence_prob(self) -> torch.Tensor:
        # log(1 - p) from the logit, then 1 - (1 - p)^r
        return -torch.expm1(self.r * F.logsigmoid(-self.logit_p))


def nb_logpmf(m, r, p):
    """Elementwise NB log-pmf for tensors or array-likes (float64 by default)."""
    m, r, p = (torch.as_tensor(x, dtype=torch.float64) for x in (m, r, p))
    if (m < 0).any() or (m != torch.round(m)).any():
        raise ValueError("counts must be nonnegative integers")
    if (r <= 0).any():
        raise ValueError("r must be positive")
    if ((p <= 0) | (p >= 1)).any():
        raise ValueError("p must lie in (0, 1)")
    return (
        torch.lgamma(m + r) - torch.lgamma(r) - torch.lgamma(m + 1.0)
        + m * torch.log(p) + r * torch.log1p(-p)
    )


def bernoulli_occurrence_prob(r, p):
    r, p = torch.as_tensor(r), torch.as_tensor(p)
    return -torch.expm1(r * torch.log1p(-p))


def bernoulli_logpmf(b: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """``sum b log q + (1 - b) log(1 - q)`` over the last axis, ``q`` clipped."""
    q = q.clamp(Q_CLIP, 1.0 - Q_CLIP)
    return (b * torch.log(q) + (1.0 - b) * torch.log1p(-q)).sum(-1)


def sample_counts(params: NBParams, rng: np.random.Generator) -> np.ndarray:
    """Gamma-Poisson draw: ``lam ~ Gamma(r, p / (1 - p))``, ``m ~ Poisson(lam)``.

    Rates are capped at ``POISSON_RATE_MAX`` so degenerate parameters from an
    occurrence-only decoder still yield finite counts.
    """
    r = params.r.detach().cpu().double().numpy()
    odds = np.exp(np.minimum(params.logit_p.detach().cpu().double().numpy(), 50.0))
    lam = np.minimum(rng.gamma(shape=r, scale=odds), POISSON_RATE_MAX)
    return rng.poisson(lam).astype(np.int64)


def _stack(sizes, final_act=True) -> nn.Sequential:
    layers = []
    for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        layers.append(nn.Linear(a, b))
        if final_act or i < len(sizes) - 2:
            layers.append(nn.ReLU())
    return nn.Sequential(*layers)


class MutationVAE(nn.Module):
    """Symmetric MLP VAE over log1p-transformed count vectors.

    ``layers`` lists hidden widths followed by the latent size of ``z_M``; the
    latent is split into a shared part of size ``shared_dim`` and a
    domain-specific remainder.
    """

    def __init__(self, vocab_size: int, shared_dim: int, layers=NB_LAYERS):
        super().__init__()
        *hidden, latent = layers
        if not 0 < shared_dim < latent:
            raise ValueError(f"shared_dim must be in (0, {latent})")
        self.vocab_size = vocab_size
        self.shared_dim = shared_dim
        self.latent_dim = latent
        self.specific_dim = latent - shared_dim
        self.encoder = _stack([vocab_size, *hidden])
        self.shared_head = nn.Linear(hidden[-1], 2 * shared_dim)
        self.specific_head = nn.Linear(hidden[-1], 2 * self.specific_dim)
        self.decoder = _stack([latent, *reversed(hidden)])
        self.nb_head = nn.Linear(hidden[0], 2 * vocab_size)

    def encode(self, counts: torch.Tensor):
        """Return ``(q(z*_M | M), q(z_M0 | M))``."""
        if counts.shape[-1] != self.vocab_size:
            raise ValueError(f"expected {self.vocab_size} genes, got {counts.shape[-1]}")
        h = self.encoder(torch.log1p(counts))
        ms, ls = self.shared_head(h).chunk(2, -1)
        mo, lo = self.specific_head(h).chunk(2, -1)
        return GaussianPosterior.from_raw(ms, ls), GaussianPosterior.from_raw(mo, lo)

    def decode(self, z_shared: torch.Tensor, z_specific: torch.Tensor) -> NBParams:
        h = self.decoder(torch.cat([z_shared, z_specific], -1))
        log_r, logit_p = self.nb_head(h).chunk(2, -1)
        return NBParams(log_r.clamp(-LOG_R_MAX, LOG_R_MAX), logit_p)


def likelihood_logprob(params: NBParams, counts: torch.Tensor, likelihood: str) -> torch.Tensor:
    """Per-sample log-likelihood of a profile under the chosen observation model."""
    if likelihood == "nb":
        return params.log_prob(counts)
    if likelihood == "bernoulli":
        return bernoulli_logpmf((counts > 0).to(params.logit_p.dtype), params.occurrence_prob())
    raise ValueError(f"unknown likelihood {likelihood!r}")
