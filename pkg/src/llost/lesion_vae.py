"""Point-cloud VAE: PointNet-style encoder and fully connected decoder."""

from __future__ import annotations

import torch
from torch import nn

from .latent import GaussianPosterior

LESION_LATENT = 512


class PointEncoder(nn.Module):
    """Shared per-point MLP followed by a max-pool over points.

    The pooled feature is a function of the point multiset only, so the
    output is invariant to point order and to duplicating points.
    """

    def __init__(self, widths=(64, 128, 256, 512)):
        super().__init__()
        layers, prev = [], 3
        for w in widths:
            layers += [nn.Linear(prev, w), nn.ReLU()]
            prev = w
        self.point_mlp = nn.Sequential(*layers)
        self.out_dim = prev

    def forward(self, cloud: torch.Tensor) -> torch.Tensor:
        if not torch.isfinite(cloud).all():
            raise ValueError("point cloud contains non-finite coordinates")
        if cloud.shape[-2] == 0:
            raise ValueError("empty point cloud")
        return self.point_mlp(cloud).amax(dim=-2)


class LesionVAE(nn.Module):
    def __init__(self, n_points: int, shared_dim: int = 200, latent_dim: int = LESION_LATENT):
        super().__init__()
        if not 0 < shared_dim < latent_dim:
            raise ValueError(f"shared_dim must be in (0, {latent_dim})")
        self.n_points = n_points
        self.shared_dim = shared_dim
        self.latent_dim = latent_dim
        self.specific_dim = latent_dim - shared_dim
        self.encoder = PointEncoder()
        self.shared_head = nn.Linear(self.encoder.out_dim, 2 * shared_dim)
        self.specific_head = nn.Linear(self.encoder.out_dim, 2 * self.specific_dim)
        self.decoder = nn.Sequential(
            nn.Linear(latent_dim, 512),
            nn.ReLU(),
            nn.Linear(512, 1024),
            nn.ReLU(),
            nn.Linear(1024, 3 * n_points),
        )

    def encode(self, cloud: torch.Tensor):
        """``cloud`` is ``(batch, n, 3)``; returns ``(q(z*_I | I), q(z_I0 | I))``."""
        h = self.encoder(cloud)
        ms, ls = self.shared_head(h).chunk(2, -1)
        mo, lo = self.specific_head(h).chunk(2, -1)
        return GaussianPosterior.from_raw(ms, ls), GaussianPosterior.from_raw(mo, lo)

    def decode(self, z_shared: torch.Tensor, z_specific: torch.Tensor) -> torch.Tensor:
        z = torch.cat([z_shared, z_specific], -1)
        return self.decoder(z).unflatten(-1, (self.n_points, 3))


def chamfer(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Symmetric Chamfer distance with squared Euclidean point distances.

    Works on single clouds ``(n, 3)`` or batches ``(batch, n, 3)``. Ties in the
    nearest neighbour go to the lowest index.
    """
    if a.shape[-2] == 0 or b.shape[-2] == 0:
        raise ValueError("chamfer needs non-empty clouds")
    d = (a.unsqueeze(-2) - b.unsqueeze(-3)).pow(2).sum(-1)
    a_to_b = d.gather(-1, d.argmin(-1, keepdim=True)).squeeze(-1)
    b_to_a = d.gather(-2, d.argmin(-2, keepdim=True)).squeeze(-2)
    return a_to_b.mean(-1) + b_to_a.mean(-1)
