"""Size profiles.

The ``toy`` profile is what everything trains and evaluates on; the ``paper``
profile exists so shape contracts (18x512 embeddings, 768-dim tokens) stay
constructible, but no trained artifacts are provided for it.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ConfigurationError


@dataclass(frozen=True)
class Profile:
    name: str
    n_styles: int        # style vectors per embedding
    style_dim: int       # dims per style vector
    ctx_dim: int         # conditioning token dim (text and identity tokens)
    identity_tokens: int = 4
    text_len: int = 8
    face_size: int = 32      # aligned face render, square
    wild_size: int = 64      # composed wild image, square
    latent_channels: int = 48
    codec_factor: int = 4
    timesteps: int = 1000
    unet_channels: tuple[int, int] = (32, 64)

    @property
    def wplus_shape(self) -> tuple[int, int]:
        return (self.n_styles, self.style_dim)


TOY = Profile(name="toy", n_styles=4, style_dim=16, ctx_dim=32)
PAPER = Profile(name="paper", n_styles=18, style_dim=512, ctx_dim=768)

_PROFILES = {"toy": TOY, "paper": PAPER}


def get_profile(name: str) -> Profile:
    try:
        return _PROFILES[name]
    except KeyError:
        raise ConfigurationError(f"unknown profile {name!r}; choose from {sorted(_PROFILES)}") from None
