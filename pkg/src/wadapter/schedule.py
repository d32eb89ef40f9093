"""Forward diffusion schedule and noising."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import torch

from .errors import ShapeError, ValidationError

BETA_START = 1e-4
BETA_END = 0.02


@dataclass(frozen=True)
class NoiseSchedule:
    timesteps: int
    betas: np.ndarray        # (T,) float64
    alpha_bars: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.betas.shape != (self.timesteps,):
            raise ShapeError("betas length must equal timesteps")
        object.__setattr__(
            self, "alpha_bars", np.cumprod(1.0 - self.betas.astype(np.float64))
        )

    def validate(self) -> None:
        b = self.betas
        if not (np.all(b > 0.0) and np.all(b < 1.0)):
            raise ValidationError("betas must lie strictly in (0, 1)")
        if np.any(np.diff(b) < 0):
            raise ValidationError("betas must be monotone nondecreasing")
        ab = self.alpha_bars
        if np.any(np.diff(ab) >= 0):
            raise ValidationError("alpha_bar must be strictly decreasing")
        if ab[0] <= 0.99:
            raise ValidationError(f"alpha_bar[0] = {ab[0]} must exceed 0.99")


def linear_schedule(
    timesteps: int = 1000, beta_start: float = BETA_START, beta_end: float = BETA_END
) -> NoiseSchedule:
    betas = np.linspace(beta_start, beta_end, timesteps, dtype=np.float64)
    sched = NoiseSchedule(timesteps=timesteps, betas=betas)
    sched.validate()
    return sched


def degenerate_schedule(timesteps: int = 1000) -> NoiseSchedule:
    """All-zero betas (alpha_bar == 1): a test hook where z_t == z_0 exactly.

    Deliberately skips validate(); not for real training.
    """
    return NoiseSchedule(timesteps=timesteps, betas=np.zeros(timesteps, dtype=np.float64))


def add_noise(
    z0: torch.Tensor, t: torch.Tensor | int, eps: torch.Tensor, schedule: NoiseSchedule
) -> torch.Tensor:
    """z_t = sqrt(alpha_bar_t) * z0 + sqrt(1 - alpha_bar_t) * eps."""
    if eps.shape != z0.shape:
        raise ShapeError(f"eps shape {tuple(eps.shape)} != z0 shape {tuple(z0.shape)}")
    t = torch.as_tensor(t, dtype=torch.long)
    if torch.any(t < 0) or torch.any(t >= schedule.timesteps):
        raise ValidationError(f"timestep out of range [0, {schedule.timesteps})")
    ab = torch.from_numpy(schedule.alpha_bars).to(z0.dtype)[t]
    while ab.dim() < z0.dim():
        ab = ab.unsqueeze(-1)
    return torch.sqrt(ab) * z0 + torch.sqrt(1.0 - ab) * eps
