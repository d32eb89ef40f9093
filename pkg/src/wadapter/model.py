"""Base model bundle and image/latent glue.

Images live in [0, 1] HWC numpy arrays; the training and sampling pipelines
shift them to [-1, 1] before the codec so flat mid-gray maps to zero latents.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .codec import decode_latent, encode_image
from .denoiser import Denoiser, build_denoiser
from .profiles import Profile
from .schedule import NoiseSchedule, linear_schedule
from .text import TextEncoder


@dataclass
class BaseModel:
    profile: Profile
    text_encoder: TextEncoder
    unet: Denoiser
    schedule: NoiseSchedule

    def frozen_parameter_snapshot(self) -> dict[str, torch.Tensor]:
        return {
            f"unet.{k}": v.detach().clone() for k, v in self.unet.state_dict().items()
        } | {
            f"text.{k}": v.detach().clone()
            for k, v in self.text_encoder.state_dict().items()
        }


def build_base_model(profile: Profile, seed: int = 0) -> BaseModel:
    """Deterministically construct the frozen base stack."""
    return BaseModel(
        profile=profile,
        text_encoder=TextEncoder(profile),
        unet=build_denoiser(profile, seed=0xD1FF + seed),
        schedule=linear_schedule(profile.timesteps),
    )


def images_to_latents(images: np.ndarray, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(B, H, W, 3) images in [0, 1] -> (B, 48, H/4, W/4) latents of 2*img - 1."""
    if images.ndim == 3:
        images = images[None]
    zs = [encode_image(2.0 * img.astype(np.float64) - 1.0) for img in images]
    z = torch.from_numpy(np.stack(zs)).permute(0, 3, 1, 2).contiguous()
    return z.to(dtype)


def latents_to_images(z: torch.Tensor) -> np.ndarray:
    """(B, 48, h, w) latents -> (B, H, W, 3) images clipped to [0, 1]."""
    arr = z.detach().to(torch.float32).permute(0, 2, 3, 1).numpy()
    imgs = [np.clip((decode_latent(a) + 1.0) / 2.0, 0.0, 1.0) for a in arr]
    return np.stack(imgs)
