"""Conditional VAE baselines with a single latent space and an unconditional flow prior.

The encoder sees the profile concatenated with a lesion embedding and the
one-hot label; the decoder sees the latent concatenated with the same
embedding and label. At test time the latent is drawn from the flow prior.
``likelihood="nb"`` gives the NB variant, ``"bernoulli"`` the occurrence one.
"""

from __future__ import annotations

import torch
import torch.nn.functional as F
from torch import nn

from .config import TrainConfig
from .coupling import ConditionalPrior, kl_to_flow_prior
from .latent import GaussianPosterior
from .lesion_vae import PointEncoder
from .model import ELBOTerms, cfg_weights, check_labels
from .mutation_vae import BERNOULLI_LAYERS, LOG_R_MAX, NB_LAYERS, NBParams, _stack, likelihood_logprob


class CVAE(nn.Module):
    def __init__(self, cfg: TrainConfig, vocab_size: int, n_types: int, n_points: int):
        super().__init__()
        self.cfg = cfg
        self.vocab_size, self.n_types, self.n_points = vocab_size, n_types, n_points
        *hidden, latent = NB_LAYERS if cfg.likelihood == "nb" else BERNOULLI_LAYERS
        self.latent_dim = latent
        self.points = PointEncoder()
        ctx = self.points.out_dim + n_types
        self.encoder = _stack([vocab_size + ctx, *hidden])
        self.head = nn.Linear(hidden[-1], 2 * latent)
        self.decoder = _stack([latent + ctx, *reversed(hidden)])
        self.nb_head = nn.Linear(hidden[0], 2 * vocab_size)
        self.prior = ConditionalPrior(latent, 0, cfg.prior_steps, cfg.prior_blocks,
                                      cfg.flow_hidden, seed=cfg.seed + 3)
        self.register_buffer("trained", torch.tensor(False))

    def _context(self, clouds, labels):
        check_labels(labels, self.n_types)
        y = F.one_hot(labels, self.n_types).to(clouds.dtype)
        return torch.cat([self.points(clouds), y], -1)

    def _decode(self, z, ctx) -> NBParams:
        log_r, logit_p = self.nb_head(self.decoder(torch.cat([z, ctx], -1))).chunk(2, -1)
        return NBParams(log_r.clamp(-LOG_R_MAX, LOG_R_MAX), logit_p)

    def compute_elbo(self, clouds, counts, labels, generator=None) -> ELBOTerms:
        ctx = self._context(clouds, labels)
        mean, raw = self.head(self.encoder(torch.cat([torch.log1p(counts), ctx], -1))).chunk(2, -1)
        q = GaussianPosterior.from_raw(mean, raw)
        params = self._decode(q.rsample(generator), ctx)
        recon = likelihood_logprob(params, counts, self.cfg.likelihood).mean()
        kl = kl_to_flow_prior(q, None, self.prior, self.cfg.kl_samples, generator).mean()
        zero = recon.new_zeros(())
        return ELBOTerms(recon, zero, zero, zero, kl, zero, cfg_weights(self.cfg))

    def predict_params(self, clouds, labels, generator=None, n_draws: int = 1) -> list[NBParams]:
        ctx = self._context(clouds, labels)
        return [self._decode(self.prior.sample(None, generator, n=len(ctx)), ctx)
                for _ in range(n_draws)]
