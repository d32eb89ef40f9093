"""W+ adapter: mapping network and residual identity cross-attention.

The mapping network turns a w+ embedding into four conditioning tokens, one
per contiguous group of style vectors.  The adapter adds, on top of each text
cross-attention output f', a scaled second attention read over the identity
tokens:

    f'' = f' + scale * softmax(Q A_k(tokens)^T / sqrt(d)) A_v(tokens),  Q = A_q(f')

with the adapter projections initialized as exact copies of the layer's base
projections, so at scale 0 the base model is untouched.
"""

from __future__ import annotations

import torch
from torch import nn

from .denoiser import Denoiser, scaled_dot_attention
from .errors import ShapeError, StateError
from .profiles import Profile
from .toyworld.factors import WPlusEmbedding

_MAPPING_SEED = 0x3A9


def style_groups(n_styles: int, n_groups: int = 4) -> list[tuple[int, int]]:
    """Contiguous [start, end) ranges splitting the style vectors into groups.

    Remainders go to the leading groups: 18 styles -> 5/5/4/4.
    """
    base, rem = divmod(n_styles, n_groups)
    bounds = []
    start = 0
    for g in range(n_groups):
        size = base + (1 if g < rem else 0)
        bounds.append((start, start + size))
        start += size
    return bounds


class MappingNetwork(nn.Module):
    """Four groups of linear layers, one identity token per group."""

    def __init__(self, profile: Profile):
        super().__init__()
        self.profile = profile
        self.groups = style_groups(profile.n_styles)
        hidden = 2 * profile.ctx_dim
        self.blocks = nn.ModuleList(
            nn.Sequential(
                nn.Linear((end - start) * profile.style_dim, hidden),
                nn.GELU(),
                nn.Linear(hidden, profile.ctx_dim),
            )
            for start, end in self.groups
        )

    def forward(self, w: torch.Tensor) -> torch.Tensor:
        """(B, n_styles, style_dim) -> (B, 4, ctx_dim)."""
        if w.shape[-2:] != (self.profile.n_styles, self.profile.style_dim):
            raise ShapeError(
                f"w+ shape {tuple(w.shape[-2:])} does not match profile "
                f"{self.profile.name!r} {self.profile.wplus_shape}"
            )
        tokens = [
            block(w[:, start:end, :].reshape(w.shape[0], -1))
            for block, (start, end) in zip(self.blocks, self.groups)
        ]
        return torch.stack(tokens, dim=1)

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def build_mapping_network(profile: Profile, seed: int = _MAPPING_SEED) -> MappingNetwork:
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        return MappingNetwork(profile)


def map_wplus(
    network: MappingNetwork, w: WPlusEmbedding | torch.Tensor
) -> torch.Tensor:
    """Project one w+ embedding to its (4, ctx_dim) identity tokens."""
    if isinstance(w, WPlusEmbedding):
        w = torch.from_numpy(w.vectors)
    w = w.to(next(network.parameters()).dtype)
    if w.dim() == 2:
        return network(w.unsqueeze(0))[0]
    return network(w)


class AdapterLayer(nn.Module):
    """Identity-attention projections for one cross-attention layer."""

    def __init__(self, d_model: int, d_ctx: int):
        super().__init__()
        self.d_model = d_model
        self.d_ctx = d_ctx
        self.to_q = nn.Linear(d_model, d_model, bias=False)
        self.to_k = nn.Linear(d_ctx, d_model, bias=False)
        self.to_v = nn.Linear(d_ctx, d_model, bias=False)

    def attention_term(self, f_prime: torch.Tensor, id_tokens: torch.Tensor) -> torch.Tensor:
        if id_tokens.shape[-1] != self.d_ctx:
            raise ShapeError(
                f"identity token dim {id_tokens.shape[-1]} != expected {self.d_ctx}"
            )
        if id_tokens.dim() == 2:
            id_tokens = id_tokens.unsqueeze(0).expand(f_prime.shape[0], -1, -1)
        return scaled_dot_attention(
            self.to_q(f_prime), self.to_k(id_tokens), self.to_v(id_tokens)
        )

    def forward(
        self, f_prime: torch.Tensor, id_tokens: torch.Tensor, identity_scale: float = 1.0
    ) -> torch.Tensor:
        return residual_cross_attention(f_prime, id_tokens, identity_scale, self)


def residual_cross_attention(
    f_prime: torch.Tensor,
    id_tokens: torch.Tensor,
    identity_scale: float,
    layer: AdapterLayer,
) -> torch.Tensor:
    """f'' = f' + scale * attention over the identity tokens; f' is never mutated."""
    return f_prime + identity_scale * layer.attention_term(f_prime, id_tokens)


class IdentityAdapter(nn.Module):
    """One AdapterLayer per cross-attention layer of a denoiser, plus the train-time scale."""

    def __init__(self, layers: list[AdapterLayer], train_scale: float = 1.0):
        super().__init__()
        self.layers = nn.ModuleList(layers)
        self.train_scale = train_scale

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


def init_adapter(denoiser: Denoiser) -> IdentityAdapter:
    """Create adapter layers for every cross-attention layer, copying its projections."""
    layers = []
    for cross in denoiser.cross_attention_layers():
        layer = AdapterLayer(cross.d_model, cross.d_ctx)
        with torch.no_grad():
            layer.to_q.weight.copy_(cross.to_q.weight)
            layer.to_k.weight.copy_(cross.to_k.weight)
            layer.to_v.weight.copy_(cross.to_v.weight)
        layers.append(layer)
    return IdentityAdapter(layers)


def attach(denoiser: Denoiser, adapter: IdentityAdapter) -> None:
    """Install the adapter into every cross-attention slot (must be detached)."""
    crosses = denoiser.cross_attention_layers()
    if len(adapter.layers) != len(crosses):
        raise ShapeError(
            f"adapter has {len(adapter.layers)} layers, denoiser has {len(crosses)}"
        )
    if any(c._adapter_slot for c in crosses):
        raise StateError("an adapter is already attached")
    for cross, layer in zip(crosses, adapter.layers):
        if (layer.d_model, layer.d_ctx) != (cross.d_model, cross.d_ctx):
            raise ShapeError("adapter layer dims do not match the cross-attention layer")
        cross._adapter_slot.append(layer)


def detach(denoiser: Denoiser) -> None:
    """Remove the attached adapter, restoring baseline behavior exactly."""
    crosses = denoiser.cross_attention_layers()
    if not all(c._adapter_slot for c in crosses):
        raise StateError("no adapter is attached")
    for cross in crosses:
        cross._adapter_slot.clear()
