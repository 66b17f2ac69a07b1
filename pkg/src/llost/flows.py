"""Conditional affine-coupling normalizing flows.

A :class:`FlowStack` maps data ``z`` to base noise ``eps`` in the forward
direction and scores ``z`` by the change-of-variables formula

    log p(z | c) = log N(forward(z, c); 0, I) + log|det d forward / dz|

The condition ``c`` only ever enters the scale and shift networks, so every
block stays invertible for any condition.
"""

from __future__ import annotations

import math

import torch
from torch import nn

LOG_2PI = math.log(2.0 * math.pi)


def _check_finite(name: str, x: torch.Tensor) -> None:
    if not torch.isfinite(x).all():
        raise ValueError(f"non-finite values in {name}")


def _mlp(n_in: int, hidden: int, n_out: int) -> nn.Sequential:
    net = nn.Sequential(
        nn.Linear(n_in, hidden),
        nn.Tanh(),
        nn.Linear(hidden, hidden),
        nn.Tanh(),
        nn.Linear(hidden, n_out),
    )
    # bounded hidden units keep t bounded, so off-distribution inputs cannot
    # snowball through deep stacks; zero last layer starts the block at identity
    nn.init.zeros_(net[-1].weight)
    nn.init.zeros_(net[-1].bias)
    return net


class CouplingBlock(nn.Module):
    """One affine coupling: ``y1 = z1 * exp(s(z2, c)) + t(z2, c)``, ``y2 = z2``.

    ``side`` picks which half is updated (0: the first ``dim // 2``
    coordinates, 1: the rest). A one-dimensional block has nothing to condition
    on but ``c``, so ``s`` and ``t`` are then functions of the condition alone.
    """

    def __init__(
        self,
        dim: int,
        cond_dim: int = 0,
        hidden: int = 128,
        scale_clamp: float = 2.0,
        side: int = 0,
    ):
        super().__init__()
        if dim < 1:
            raise ValueError("dim must be >= 1")
        if scale_clamp <= 0:
            raise ValueError("scale_clamp must be positive")
        self.dim = dim
        self.cond_dim = cond_dim
        self.scale_clamp = float(scale_clamp)
        if dim == 1:
            self.updated = slice(0, 1)
            self.passive = slice(0, 0)
            n_upd, n_pas = 1, 0
        else:
            k = dim // 2
            if side == 0:
                self.updated, self.passive = slice(0, k), slice(k, dim)
                n_upd, n_pas = k, dim - k
            else:
                self.updated, self.passive = slice(k, dim), slice(0, k)
                n_upd, n_pas = dim - k, k
        self.side = side
        self.n_updated = n_upd
        self.s_net = _mlp(n_pas + cond_dim, hidden, n_upd)
        self.t_net = _mlp(n_pas + cond_dim, hidden, n_upd)

    def _scale_shift(self, z_passive: torch.Tensor, c: torch.Tensor | None):
        h = z_passive if c is None or self.cond_dim == 0 else torch.cat([z_passive, c], dim=-1)
        s = self.s_net(h)
        s = self.scale_clamp * torch.tanh(s / self.scale_clamp)
        return s, self.t_net(h)

    def _join(self, upd: torch.Tensor, pas: torch.Tensor) -> torch.Tensor:
        if self.dim == 1:
            return upd
        return torch.cat([upd, pas], -1) if self.side == 0 else torch.cat([pas, upd], -1)

    def forward(self, z: torch.Tensor, c: torch.Tensor | None = None):
        """Return ``(y, logdet)`` with ``logdet`` of shape ``(batch,)``."""
        z1, z2 = z[..., self.updated], z[..., self.passive]
        s, t = self._scale_shift(z2, c)
        y1 = z1 * torch.exp(s) + t
        return self._join(y1, z2), s.sum(-1)

    def inverse(self, y: torch.Tensor, c: torch.Tensor | None = None) -> torch.Tensor:
        y1, y2 = y[..., self.updated], y[..., self.passive]
        s, t = self._scale_shift(y2, c)
        z1 = (y1 - t) * torch.exp(-s)
        return self._join(z1, y2)


class FlowStack(nn.Module):
    """A stack of ``n_steps`` flow steps over a standard-normal base.

    Each step applies a fixed random channel permutation followed by
    ``blocks_per_step`` coupling blocks that alternate the updated half. A final
    fixed permutation undoes the composed permutations, so a freshly
    initialised stack is exactly the identity map.
    """

    def __init__(
        self,
        dim: int,
        cond_dim: int = 0,
        n_steps: int = 12,
        blocks_per_step: int = 2,
        hidden: int = 128,
        scale_clamp: float = 2.0,
        seed: int = 0,
    ):
        super().__init__()
        if n_steps < 1 or blocks_per_step < 1:
            raise ValueError("need at least one step and one block per step")
        self.dim = dim
        self.cond_dim = cond_dim
        self.n_steps = n_steps
        self.blocks_per_step = blocks_per_step
        self.blocks = nn.ModuleList(
            CouplingBlock(dim, cond_dim, hidden, scale_clamp, side=j % 2)
            for _ in range(n_steps)
            for j in range(blocks_per_step)
        )
        g = torch.Generator().manual_seed(seed)
        perms = torch.stack([torch.randperm(dim, generator=g) for _ in range(n_steps)])
        composed = torch.arange(dim)
        for p in perms:
            composed = composed[p]
        self.register_buffer("perms", perms)
        self.register_buffer("inv_perms", torch.argsort(perms, dim=1))
        self.register_buffer("restore", torch.argsort(composed))
        self.register_buffer("unrestore", composed.clone())

    def _check(self, z: torch.Tensor, c: torch.Tensor | None) -> None:
        if z.shape[-1] != self.dim:
            raise ValueError(f"expected dim {self.dim}, got {z.shape[-1]}")
        if self.cond_dim:
            if c is None or c.shape[-1] != self.cond_dim:
                got = None if c is None else c.shape[-1]
                raise ValueError(f"condition dim mismatch: expected {self.cond_dim}, got {got}")
            _check_finite("condition", c)
        _check_finite("input", z)

    def _step_blocks(self, i: int):
        return self.blocks[i * self.blocks_per_step:(i + 1) * self.blocks_per_step]

    def forward(self, z: torch.Tensor, c: torch.Tensor | None = None):
        """Map data to base space; returns ``(eps, total_logdet)``."""
        self._check(z, c)
        logdet = z.new_zeros(z.shape[:-1])
        for i in range(self.n_steps):
            z = z[..., self.perms[i]]
            for block in self._step_blocks(i):
                z, ld = block(z, c)
                logdet = logdet + ld
        return z[..., self.restore], logdet

    def inverse(self, y: torch.Tensor, c: torch.Tensor | None = None) -> torch.Tensor:
        self._check(y, c)
        z = y[..., self.unrestore]
        for i in reversed(range(self.n_steps)):
            for block in reversed(self._step_blocks(i)):
                z = block.inverse(z, c)
            z = z[..., self.inv_perms[i]]
        return z

    def log_prob(self, z: torch.Tensor, c: torch.Tensor | None = None) -> torch.Tensor:
        eps, logdet = self.forward(z, c)
        return standard_normal_logprob(eps) + logdet

    def sample(
        self,
        n: int,
        c: torch.Tensor | None = None,
        generator: torch.Generator | None = None,
    ) -> torch.Tensor:
        """Draw ``n`` samples; ``c`` is ``(n, cond_dim)`` or broadcastable."""
        p = next(self.parameters())
        eps = torch.randn(n, self.dim, generator=generator, dtype=p.dtype, device=p.device)
        if c is not None and c.dim() == 1:
            c = c.expand(n, -1)
        return self.inverse(eps, c)


def standard_normal_logprob(eps: torch.Tensor) -> torch.Tensor:
    return -0.5 * (eps.pow(2).sum(-1) + eps.shape[-1] * LOG_2PI)


def perturb_(module: nn.Module, std: float, generator: torch.Generator | None = None) -> nn.Module:
    """Add Gaussian noise to every parameter in place (test and demo helper)."""
    with torch.no_grad():
        for p in module.parameters():
            p.add_(torch.randn(p.shape, generator=generator, dtype=p.dtype) * std)
    return module
