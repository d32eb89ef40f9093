"""Deterministic DDIM sampling with classifier-free guidance and w+ editing."""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
import torch

from .adapter import MappingNetwork, map_wplus
from .errors import ConfigurationError, ShapeError, ValidationError
from .model import BaseModel, latents_to_images
from .toyworld.factors import EditDirection, WPlusEmbedding, apply_edit


@dataclass(frozen=True)
class SamplerConfig:
    steps: int = 50
    guidance_scale: float = 7.5
    eta: float = 0.0
    identity_scale: float = 1.0   # the lambda knob; 0 recovers the base model
    seed: int = 0
    image_size: int = 64

    def __post_init__(self):
        if self.steps < 1:
            raise ValidationError("steps must be >= 1")
        if not (0.0 <= self.eta <= 1.0):
            raise ValidationError("eta must lie in [0, 1]")
        if self.guidance_scale < 0.0:
            raise ValidationError("guidance_scale must be >= 0")


def cfg_combine(
    eps_uncond: torch.Tensor, eps_cond: torch.Tensor, scale: float
) -> torch.Tensor:
    """Guided prediction eps_uncond + scale * (eps_cond - eps_uncond)."""
    if eps_uncond.shape != eps_cond.shape:
        raise ShapeError(
            f"shape mismatch {tuple(eps_uncond.shape)} vs {tuple(eps_cond.shape)}"
        )
    return eps_uncond + scale * (eps_cond - eps_uncond)


def timestep_sequence(total_timesteps: int, steps: int) -> list[int]:
    """Evenly spaced descending timesteps ending exactly at 0."""
    if steps > total_timesteps:
        raise ConfigurationError(f"steps {steps} exceeds schedule length {total_timesteps}")
    ts = np.linspace(total_timesteps - 1, 0, steps)
    return [int(round(t)) for t in ts]


def ddim_step(
    z: torch.Tensor, eps_hat: torch.Tensor, ab_t: float, ab_prev: float
) -> torch.Tensor:
    """One deterministic (eta = 0) DDIM update from alpha_bar_t to alpha_bar_prev."""
    x0 = (z - np.sqrt(1.0 - ab_t) * eps_hat) / np.sqrt(ab_t)
    return np.sqrt(ab_prev) * x0 + np.sqrt(1.0 - ab_prev) * eps_hat


def ddim_latents(
    denoise_fn,
    shape: tuple[int, ...],
    schedule,
    config: SamplerConfig,
    generator: torch.Generator | None = None,
    dtype: torch.dtype = torch.float32,
) -> torch.Tensor:
    """Run the DDIM loop from seeded noise; denoise_fn(z, t) -> guided prediction."""
    if generator is None:
        generator = torch.Generator()
        generator.manual_seed(config.seed)
    z = torch.randn(shape, generator=generator, dtype=dtype)
    ts = timestep_sequence(schedule.timesteps, config.steps)
    ab = schedule.alpha_bars
    for i, t in enumerate(ts):
        eps_hat = denoise_fn(z, t)
        ab_prev = ab[ts[i + 1]] if i + 1 < len(ts) else 1.0
        z = ddim_step(z, eps_hat, float(ab[t]), float(ab_prev))
    return z


def _guided_denoise_fn(
    model: BaseModel,
    text_emb: torch.Tensor,
    id_tokens: torch.Tensor | None,
    config: SamplerConfig,
):
    """Batched CFG pair: unconditional branch uses null text and zero identity tokens."""
    null_text = model.text_encoder.null_condition()
    attached = model.unet.adapter_attached

    def fn(z: torch.Tensor, t: int) -> torch.Tensor:
        b = z.shape[0]
        text_c = text_emb.unsqueeze(0).expand(b, -1, -1) if text_emb.dim() == 2 else text_emb
        text_u = null_text.unsqueeze(0).expand(b, -1, -1).to(z.dtype)
        z2 = torch.cat([z, z], dim=0)
        ctx = torch.cat([text_u, text_c.to(z.dtype)], dim=0)
        if attached:
            tok_c = (
                id_tokens.unsqueeze(0).expand(b, -1, -1)
                if id_tokens is not None and id_tokens.dim() == 2
                else id_tokens
            )
            if tok_c is None:
                tok_c = torch.zeros(
                    b, model.profile.identity_tokens, model.profile.ctx_dim, dtype=z.dtype
                )
            tok = torch.cat([torch.zeros_like(tok_c), tok_c.to(z.dtype)], dim=0)
        else:
            tok = None
        with torch.no_grad():
            eps = model.unet(z2, t, ctx, tok, config.identity_scale)
        return cfg_combine(eps[:b], eps[b:], config.guidance_scale)

    return fn


def ddim_sample(
    model: BaseModel,
    prompt: str,
    id_tokens: torch.Tensor | None,
    config: SamplerConfig,
) -> np.ndarray:
    """Sample one image; fully determined by (model state, prompt, tokens, config)."""
    if id_tokens is not None and not model.unet.adapter_attached:
        raise ConfigurationError("identity tokens given but no adapter is attached")
    size = config.image_size
    if size % model.profile.codec_factor:
        raise ShapeError(f"image_size must be divisible by {model.profile.codec_factor}")
    lat = size // model.profile.codec_factor
    text_emb = model.text_encoder.encode(prompt)
    fn = _guided_denoise_fn(model, text_emb, id_tokens, config)
    shape = (1, model.profile.latent_channels, lat, lat)
    z0 = ddim_latents(fn, shape, model.schedule, config)
    return latents_to_images(z0)[0]


def ddim_sample_batch(
    model: BaseModel,
    prompts: list[str],
    id_tokens_batch: torch.Tensor | None,
    config: SamplerConfig,
    seeds: list[int] | None = None,
) -> np.ndarray:
    """Sample many images in one batched DDIM run.

    Each sample's initial noise comes from its own seeded generator, so sample
    i is reproducible regardless of how the batch is grouped.
    """
    b = len(prompts)
    if seeds is None:
        seeds = [config.seed + i for i in range(b)]
    if len(seeds) != b:
        raise ValidationError("need one seed per prompt")
    if id_tokens_batch is not None and not model.unet.adapter_attached:
        raise ConfigurationError("identity tokens given but no adapter is attached")
    size = config.image_size
    lat = size // model.profile.codec_factor
    shape = (model.profile.latent_channels, lat, lat)
    z = torch.stack(
        [
            torch.randn(shape, generator=torch.Generator().manual_seed(int(s)))
            for s in seeds
        ]
    )
    text_emb = model.text_encoder.encode_batch(prompts)
    fn = _guided_denoise_fn(model, text_emb, id_tokens_batch, config)
    ts = timestep_sequence(model.schedule.timesteps, config.steps)
    ab = model.schedule.alpha_bars
    for i, t in enumerate(ts):
        eps_hat = fn(z, t)
        ab_prev = ab[ts[i + 1]] if i + 1 < len(ts) else 1.0
        z = ddim_step(z, eps_hat, float(ab[t]), float(ab_prev))
    return latents_to_images(z)


def sample_with_edit(
    model: BaseModel,
    mapping: MappingNetwork,
    prompt: str,
    w: WPlusEmbedding,
    direction: EditDirection,
    alpha: float,
    config: SamplerConfig,
) -> np.ndarray:
    """Sample with identity tokens from the edited embedding w + alpha * delta."""
    edited = apply_edit(w, direction, alpha)
    tokens = map_wplus(mapping, edited)
    return ddim_sample(model, prompt, tokens, config)


def interpolate_wplus(
    w1: WPlusEmbedding, w2: WPlusEmbedding, kappa: float
) -> WPlusEmbedding:
    """Exact convex combination (1 - kappa) * w1 + kappa * w2."""
    if w1.shape != w2.shape:
        raise ShapeError(f"embedding shapes differ: {w1.shape} vs {w2.shape}")
    if not (0.0 <= kappa <= 1.0):
        raise ValidationError("kappa must lie in [0, 1]")
    k = np.float32(kappa)
    return WPlusEmbedding((np.float32(1.0) - k) * w1.vectors + k * w2.vectors)


def write_sample(path: Path, image: np.ndarray, sidecar: dict) -> None:
    """Write a PNG plus a text sidecar recording the exact replay config."""
    from .toyworld.data import save_png

    path = Path(path)
    save_png(path, image)
    lines = [f"{k} = {sidecar[k]}" for k in sorted(sidecar)]
    path.with_suffix(".txt").write_text("\n".join(lines) + "\n")


def config_sidecar(config: SamplerConfig, **extra) -> dict:
    d = {
        "steps": config.steps,
        "guidance_scale": config.guidance_scale,
        "eta": config.eta,
        "lambda": config.identity_scale,
        "seed": config.seed,
        "image_size": config.image_size,
    }
    d.update(extra)
    return d


def with_seed(config: SamplerConfig, seed: int) -> SamplerConfig:
    return replace(config, seed=seed)
