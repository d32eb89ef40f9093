"""wadapter: identity-conditioned toy latent diffusion with a w+ adapter."""

from .profiles import PAPER, TOY, Profile, get_profile

__version__ = "0.1.0"

__all__ = ["PAPER", "TOY", "Profile", "get_profile", "__version__"]
