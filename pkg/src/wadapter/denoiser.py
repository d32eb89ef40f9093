"""Noise-prediction UNet with cross-attention adapter slots.

Two resolutions, residual blocks with sinusoidal timestep conditioning, one
self-attention block at the low resolution, and a cross-attention layer at
every resolution.  Attention is single-head with per-layer W_q, W_k, W_v and
no output projection, so each layer computes exactly
softmax(Q K^T / sqrt(d)) V on the normalized hidden state.

Each cross-attention layer owns one optional adapter slot.  Slots are plain
Python lists (not submodules), so attached adapter parameters never leak into
the base model's parameter set or checkpoints.
"""

from __future__ import annotations

import math

import torch
import torch.nn.functional as F
from torch import nn

from .errors import ConfigurationError, ShapeError
from .profiles import Profile

_BUILD_SEED = 0xD1FF


def scaled_dot_attention(q: torch.Tensor, k: torch.Tensor, v: torch.Tensor) -> torch.Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two dims."""
    d = q.shape[-1]
    scores = q @ k.transpose(-2, -1) / math.sqrt(d)
    return torch.softmax(scores, dim=-1) @ v


def timestep_embedding(t: torch.Tensor, dim: int, dtype: torch.dtype) -> torch.Tensor:
    """(B,) integer timesteps -> (B, dim) sinusoidal features."""
    half = dim // 2
    freqs = torch.exp(
        -math.log(10000.0) * torch.arange(half, dtype=torch.float64) / (half - 1)
    )
    args = t.to(torch.float64)[:, None] * freqs[None, :]
    emb = torch.cat([torch.sin(args), torch.cos(args)], dim=-1)
    return emb.to(dtype)


class ResBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, temb_dim: int):
        super().__init__()
        self.norm1 = nn.GroupNorm(min(8, c_in), c_in)
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.temb_proj = nn.Linear(temb_dim, c_out)
        self.norm2 = nn.GroupNorm(min(8, c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.skip = nn.Conv2d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x: torch.Tensor, temb: torch.Tensor) -> torch.Tensor:
        h = self.conv1(F.silu(self.norm1(x)))
        h = h + self.temb_proj(F.silu(temb))[:, :, None, None]
        h = self.conv2(F.silu(self.norm2(h)))
        return h + self.skip(x)


class SelfAttention(nn.Module):
    def __init__(self, d_model: int):
        super().__init__()
        self.norm = nn.LayerNorm(d_model)
        self.to_q = nn.Linear(d_model, d_model, bias=False)
        self.to_k = nn.Linear(d_model, d_model, bias=False)
        self.to_v = nn.Linear(d_model, d_model, bias=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        b, c, h, w = x.shape
        seq = x.reshape(b, c, h * w).transpose(1, 2)
        f = self.norm(seq)
        out = scaled_dot_attention(self.to_q(f), self.to_k(f), self.to_v(f))
        return x + out.transpose(1, 2).reshape(b, c, h, w)


class CrossAttention(nn.Module):
    """Text cross-attention with one optional identity-adapter slot."""

    def __init__(self, d_model: int, d_ctx: int):
        super().__init__()
        self.d_model = d_model
        self.d_ctx = d_ctx
        self.norm = nn.LayerNorm(d_model)
        self.to_q = nn.Linear(d_model, d_model, bias=False)
        self.to_k = nn.Linear(d_ctx, d_model, bias=False)
        self.to_v = nn.Linear(d_ctx, d_model, bias=False)
        self._adapter_slot: list = []  # plain list keeps the adapter out of the module tree

    @property
    def adapter(self):
        return self._adapter_slot[0] if self._adapter_slot else None

    def base_attention(self, f_z: torch.Tensor, context: torch.Tensor) -> torch.Tensor:
        """Standard scaled dot-product attention of query features over the text context."""
        if context.shape[-1] != self.d_ctx:
            raise ShapeError(f"context dim {context.shape[-1]} != expected {self.d_ctx}")
        return scaled_dot_attention(self.to_q(f_z), self.to_k(context), self.to_v(context))

    def forward(
        self,
        x: torch.Tensor,
        context: torch.Tensor,
        id_tokens: torch.Tensor | None = None,
        identity_scale: float = 1.0,
    ) -> torch.Tensor:
        b, c, h, w = x.shape
        seq = x.reshape(b, c, h * w).transpose(1, 2)
        f_prime = self.base_attention(self.norm(seq), context)
        if id_tokens is not None and self._adapter_slot:
            f_prime = self._adapter_slot[0](f_prime, id_tokens, identity_scale)
        return x + f_prime.transpose(1, 2).reshape(b, c, h, w)


class Denoiser(nn.Module):
    """Two-resolution UNet predicting the added noise."""

    def __init__(self, profile: Profile):
        super().__init__()
        self.profile = profile
        c1, c2 = profile.unet_channels
        d_ctx = profile.ctx_dim
        self.temb_dim = 2 * c2
        self.time_mlp = nn.Sequential(
            nn.Linear(c1, self.temb_dim), nn.SiLU(), nn.Linear(self.temb_dim, self.temb_dim)
        )
        self.sin_dim = c1

        c_lat = profile.latent_channels
        self.conv_in = nn.Conv2d(c_lat, c1, 3, padding=1)
        self.down_res = ResBlock(c1, c1, self.temb_dim)
        self.down_cross = CrossAttention(c1, d_ctx)
        self.downsample = nn.Conv2d(c1, c2, 3, stride=2, padding=1)
        self.mid_res1 = ResBlock(c2, c2, self.temb_dim)
        self.mid_self = SelfAttention(c2)
        self.mid_cross = CrossAttention(c2, d_ctx)
        self.mid_res2 = ResBlock(c2, c2, self.temb_dim)
        self.up_conv = nn.Conv2d(c2, c1, 3, padding=1)
        self.up_res = ResBlock(c1, c1, self.temb_dim)
        self.up_cross = CrossAttention(c1, d_ctx)
        self.norm_out = nn.GroupNorm(min(8, c1), c1)
        self.conv_out = nn.Conv2d(c1, c_lat, 3, padding=1)

    def cross_attention_layers(self) -> list[CrossAttention]:
        return [self.down_cross, self.mid_cross, self.up_cross]

    @property
    def adapter_attached(self) -> bool:
        return bool(self.down_cross._adapter_slot)

    def forward(
        self,
        z_t: torch.Tensor,
        t: torch.Tensor | int,
        context: torch.Tensor,
        id_tokens: torch.Tensor | None = None,
        identity_scale: float = 1.0,
    ) -> torch.Tensor:
        """Predict the noise in z_t.

        id_tokens may only be passed while an adapter is attached; passing None
        with an adapter attached simply skips the identity branch.
        """
        if id_tokens is not None and not self.adapter_attached:
            raise ConfigurationError("identity tokens given but no adapter is attached")
        if z_t.dim() != 4 or z_t.shape[1] != self.profile.latent_channels:
            raise ShapeError(f"expected (B, {self.profile.latent_channels}, h, w), got {tuple(z_t.shape)}")
        b = z_t.shape[0]
        t = torch.as_tensor(t, dtype=torch.long)
        if t.dim() == 0:
            t = t.expand(b)
        if context.dim() == 2:
            context = context.unsqueeze(0).expand(b, -1, -1)

        temb = self.time_mlp(timestep_embedding(t, self.sin_dim, z_t.dtype))

        h = self.conv_in(z_t)
        h = self.down_res(h, temb)
        h = self.down_cross(h, context, id_tokens, identity_scale)
        skip = h
        h = self.downsample(h)
        h = self.mid_res1(h, temb)
        h = self.mid_self(h)
        h = self.mid_cross(h, context, id_tokens, identity_scale)
        h = self.mid_res2(h, temb)
        h = F.interpolate(h, scale_factor=2, mode="nearest")
        h = self.up_conv(h)
        h = h + skip
        h = self.up_res(h, temb)
        h = self.up_cross(h, context, id_tokens, identity_scale)
        return self.conv_out(F.silu(self.norm_out(h)))


def build_denoiser(profile: Profile, seed: int = _BUILD_SEED) -> Denoiser:
    """Construct a denoiser with deterministic, seeded initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return Denoiser(profile)
