"""LLOST: paired lesion / mutation VAEs joined by a label-conditioned invertible map."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .config import TrainConfig
from .coupling import ConditionalPrior, MMDConfig, SharedMap, kl_to_flow_prior, mmd_squared
from .lesion_vae import LESION_LATENT, LesionVAE, chamfer
from .mutation_vae import BERNOULLI_LAYERS, NB_LAYERS, MutationVAE, NBParams, likelihood_logprob

TERM_NAMES = ("recon_M", "recon_I", "mmd_M", "mmd_I", "kl_M", "kl_I")


@dataclass
class ELBOTerms:
    recon_M: torch.Tensor
    recon_I: torch.Tensor
    mmd_M: torch.Tensor
    mmd_I: torch.Tensor
    kl_M: torch.Tensor
    kl_I: torch.Tensor
    weights: tuple[float, float, float, float]  # (recon_M, recon_I, mmd, kl)

    def __post_init__(self):
        for name in TERM_NAMES:
            if not torch.isfinite(getattr(self, name)).all():
                raise FloatingPointError(f"non-finite ELBO term {name}")

    @property
    def total(self) -> torch.Tensor:
        """Weighted ELBO; training minimizes ``-total``."""
        w_rm, w_ri, w_mmd, w_kl = self.weights
        return (w_rm * self.recon_M + w_ri * self.recon_I
                - w_mmd * (self.mmd_M + self.mmd_I) - w_kl * (self.kl_M + self.kl_I))

    def as_floats(self) -> dict[str, float]:
        out = {n: float(getattr(self, n).detach()) for n in TERM_NAMES}
        out["total"] = float(self.total.detach())
        return out


def cfg_weights(cfg: TrainConfig) -> tuple[float, float, float, float]:
    return (cfg.lambda_recon_M, cfg.lambda_recon_I, cfg.lambda_mmd, cfg.lambda_kl)


def check_labels(labels: torch.Tensor, n_types: int) -> None:
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_types):
        raise ValueError(f"label out of range [0, {n_types})")


class LLOST(nn.Module):
    def __init__(self, cfg: TrainConfig, vocab_size: int, n_types: int, n_points: int):
        super().__init__()
        self.cfg = cfg
        self.vocab_size, self.n_types, self.n_points = vocab_size, n_types, n_points
        s = cfg.shared_dim
        layers = NB_LAYERS if cfg.likelihood == "nb" else BERNOULLI_LAYERS
        self.lesion = LesionVAE(n_points, s, LESION_LATENT)
        self.mutation = MutationVAE(vocab_size, s, layers)
        self.shared = SharedMap(s, n_types, cfg.map_steps, cfg.map_blocks, cfg.flow_hidden,
                                use_label=cfg.use_label, seed=cfg.seed,
                                scale_clamp=cfg.map_scale_clamp)
        self.prior_I = ConditionalPrior(self.lesion.specific_dim, s, cfg.prior_steps,
                                        cfg.prior_blocks, cfg.flow_hidden, seed=cfg.seed + 1)
        self.prior_M = ConditionalPrior(self.mutation.specific_dim, s, cfg.prior_steps,
                                        cfg.prior_blocks, cfg.flow_hidden, seed=cfg.seed + 2)
        self.mmd_cfg = MMDConfig(cfg.mmd_bandwidth)
        self.register_buffer("trained", torch.tensor(False))

    def compute_elbo(self, clouds, counts, labels, generator=None) -> ELBOTerms:
        """Single-sample ELBO terms averaged over the batch.

        Each domain is reconstructed from its own specific latent and the
        shared latent carried over from the other domain through the map, so
        both map directions enter every update.
        """
        check_labels(labels, self.n_types)
        q_sI, q_0I = self.lesion.encode(clouds)
        q_sM, q_0M = self.mutation.encode(counts)
        zs_I, z0_I = q_sI.rsample(generator), q_0I.rsample(generator)
        zs_M, z0_M = q_sM.rsample(generator), q_0M.rsample(generator)

        zs_M_from_I = self.shared(zs_I, labels, "I->M")
        zs_I_from_M = self.shared(zs_M, labels, "M->I")

        params = self.mutation.decode(zs_M_from_I, z0_M)
        recon_M = likelihood_logprob(params, counts, self.cfg.likelihood).mean()
        recon_I = -chamfer(self.lesion.decode(zs_I_from_M, z0_I), clouds).mean()

        mmd_M = mmd_squared(zs_M, zs_M_from_I, self.mmd_cfg)
        mmd_I = mmd_squared(zs_I, zs_I_from_M, self.mmd_cfg)
        k = self.cfg.kl_samples
        kl_M = kl_to_flow_prior(q_0M, zs_M_from_I, self.prior_M, k, generator).mean()
        kl_I = kl_to_flow_prior(q_0I, zs_I_from_M, self.prior_I, k, generator).mean()
        return ELBOTerms(recon_M, recon_I, mmd_M, mmd_I, kl_M, kl_I, cfg_weights(self.cfg))

    def shared_from_lesion(self, clouds, labels) -> torch.Tensor:
        """Steps 1-2: posterior-mean lesion shared latent mapped to the mutation side."""
        q_sI, _ = self.lesion.encode(clouds)
        return self.shared(q_sI.mean, labels, "I->M")

    def predict_params(self, clouds, labels, generator=None, n_draws: int = 1) -> list[NBParams]:
        """Steps 1-4 of prediction, repeated for ``n_draws`` prior samples."""
        check_labels(labels, self.n_types)
        zs_M = self.shared_from_lesion(clouds, labels)
        out = []
        for _ in range(n_draws):
            z0_M = self.prior_M.sample(zs_M, generator)
            out.append(self.mutation.decode(zs_M, z0_M))
        return out


def predictive_logprob(draws: list[NBParams], counts: torch.Tensor, likelihood: str) -> torch.Tensor:
    """Per-sample Monte Carlo log predictive ``log mean_k p(M | z_k)``."""
    lp = torch.stack([likelihood_logprob(p, counts, likelihood) for p in draws])
    return torch.logsumexp(lp, 0) - math.log(len(draws))
