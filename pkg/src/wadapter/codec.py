"""Exact-inverse image <-> latent codec.

Two space-to-depth steps (factor 2 each) followed by a fixed seeded orthonormal
channel mixing.  The mixing matrix is orthonormal in float64, so decode is the
exact inverse of encode and norms are preserved; there is no learned component
to trust.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np

from .errors import ShapeError

LATENT_CHANNELS = 48
FACTOR = 4

_MIX_SEED = 0xC0DEC


@lru_cache(maxsize=None)
def _mixing_matrix(channels: int = LATENT_CHANNELS) -> np.ndarray:
    rng = np.random.default_rng(_MIX_SEED)
    q, _ = np.linalg.qr(rng.normal(size=(channels, channels)))
    return q


def _space_to_depth(x: np.ndarray, r: int = 2) -> np.ndarray:
    h, w, c = x.shape
    x = x.reshape(h // r, r, w // r, r, c)
    return x.transpose(0, 2, 1, 3, 4).reshape(h // r, w // r, r * r * c)


def _depth_to_space(x: np.ndarray, r: int = 2) -> np.ndarray:
    h, w, c = x.shape
    x = x.reshape(h, w, r, r, c // (r * r))
    return x.transpose(0, 2, 1, 3, 4).reshape(h * r, w * r, c // (r * r))


def encode_image(img: np.ndarray) -> np.ndarray:
    """(H, W, 3) image -> (H/4, W/4, 48) latent, float32."""
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got {img.shape}")
    h, w = img.shape[:2]
    if h % FACTOR or w % FACTOR:
        raise ShapeError(f"image dims must be divisible by {FACTOR}, got {h}x{w}")
    z = _space_to_depth(_space_to_depth(img.astype(np.float64)))
    z = z @ _mixing_matrix()
    return z.astype(np.float32)


def decode_latent(z: np.ndarray) -> np.ndarray:
    """(H/4, W/4, 48) latent -> (H, W, 3) image, float32."""
    z = np.asarray(z)
    if z.ndim != 3 or z.shape[2] != LATENT_CHANNELS:
        raise ShapeError(f"expected (h, w, {LATENT_CHANNELS}) latent, got {z.shape}")
    x = z.astype(np.float64) @ _mixing_matrix().T
    return _depth_to_space(_depth_to_space(x)).astype(np.float32)
