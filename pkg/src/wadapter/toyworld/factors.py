"""Analytic factor space behind the toy face world.

A fixed row-orthonormal matrix maps flattened w+ embeddings to four factor
coordinates; a fixed monotone squash maps each coordinate onto its documented
range.  Because the map is linear + invertible, every semantic claim about the
embedding space (edits move one factor, identity untouched) is exactly
checkable, which is the whole point of this substitute world.

Factor order: hue, eye_spacing, smile, age_radius.  The first two are the
identity factors, the last two the editable attributes.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from ..errors import ConfigurationError, ShapeError
from ..profiles import Profile

FACTOR_NAMES = ("hue", "eye_spacing", "smile", "age_radius")
FACTOR_RANGES = {
    "hue": (0.0, 1.0),
    "eye_spacing": (0.2, 0.8),
    "smile": (-1.0, 1.0),
    "age_radius": (0.3, 0.9),
}
IDENTITY_FACTORS = ("hue", "eye_spacing")
ATTRIBUTE_FACTORS = ("smile", "age_radius")

# Scale of raw w+ entries drawn by sample_wplus.  Chosen so the squashed
# factors reliably reach the outer few percent of their ranges over ~10^4 draws.
WPLUS_SCALE = 2.0

_MATRIX_SEED = 0x57AD

_CLIP = 1e-12


@dataclass(frozen=True)
class WPlusEmbedding:
    """Identity embedding: a stack of style vectors, shape (n_styles, style_dim)."""

    vectors: np.ndarray

    def __post_init__(self):
        v = self.vectors
        if v.ndim != 2:
            raise ShapeError(f"w+ must be 2-d, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeError("w+ contains non-finite entries")

    @property
    def shape(self) -> tuple[int, int]:
        return self.vectors.shape

    def flatten(self) -> np.ndarray:
        return self.vectors.reshape(-1)

    def __add__(self, other: "WPlusEmbedding") -> "WPlusEmbedding":
        return WPlusEmbedding(self.vectors + other.vectors)


@dataclass(frozen=True)
class FactorVector:
    """Squashed factor coordinates of one face."""

    hue: float
    eye_spacing: float
    smile: float
    age_radius: float

    def as_array(self) -> np.ndarray:
        return np.array([self.hue, self.eye_spacing, self.smile, self.age_radius], dtype=np.float64)

    @staticmethod
    def from_array(a) -> "FactorVector":
        a = np.asarray(a, dtype=np.float64)
        return FactorVector(float(a[0]), float(a[1]), float(a[2]), float(a[3]))

    def identity(self) -> np.ndarray:
        return np.array([self.hue, self.eye_spacing], dtype=np.float64)

    def attributes(self) -> np.ndarray:
        return np.array([self.smile, self.age_radius], dtype=np.float64)


@dataclass(frozen=True)
class EditDirection:
    """Unit-norm w+ direction moving exactly one attribute factor."""

    delta: np.ndarray
    attribute_name: str


@lru_cache(maxsize=None)
def _factor_matrix_cached(n_styles: int, style_dim: int) -> np.ndarray:
    dim = n_styles * style_dim
    rng = np.random.default_rng(_MATRIX_SEED)
    raw = rng.normal(size=(dim, 4))
    q, _ = np.linalg.qr(raw)
    return np.ascontiguousarray(q.T)  # (4, dim), rows orthonormal


def factor_matrix(profile: Profile) -> np.ndarray:
    """Fixed row-orthonormal (4, n_styles*style_dim) matrix for this profile."""
    return _factor_matrix_cached(profile.n_styles, profile.style_dim)


def squash(x: np.ndarray) -> np.ndarray:
    """Monotone bijection from raw factor coordinates onto the documented ranges."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty(4, dtype=np.float64)
    for i, name in enumerate(FACTOR_NAMES):
        lo, hi = FACTOR_RANGES[name]
        s = 1.0 / (1.0 + np.exp(-x[i]))
        out[i] = lo + (hi - lo) * s
    return out


def unsquash(f: np.ndarray) -> np.ndarray:
    """Inverse of :func:`squash`."""
    f = np.asarray(f, dtype=np.float64)
    out = np.empty(4, dtype=np.float64)
    for i, name in enumerate(FACTOR_NAMES):
        lo, hi = FACTOR_RANGES[name]
        s = np.clip((f[i] - lo) / (hi - lo), _CLIP, 1.0 - _CLIP)
        out[i] = np.log(s / (1.0 - s))
    return out


def factors_of(w: WPlusEmbedding, profile: Profile) -> FactorVector:
    """Ground-truth factors of an embedding (the analytic oracle)."""
    _check_profile(w, profile)
    raw = factor_matrix(profile) @ w.flatten().astype(np.float64)
    return FactorVector.from_array(squash(raw))


def sample_wplus(rng_seed: int, profile: Profile | str) -> WPlusEmbedding:
    """Deterministically draw one w+ embedding for the given seed."""
    if isinstance(profile, str):
        from ..profiles import get_profile

        profile = get_profile(profile)
    if not isinstance(profile, Profile):
        raise ConfigurationError(f"not a profile: {profile!r}")
    rng = np.random.default_rng(int(rng_seed))
    vecs = rng.normal(0.0, WPLUS_SCALE, size=profile.wplus_shape).astype(np.float32)
    return WPlusEmbedding(vecs)


EDIT_ATTRIBUTES = {"smile": "smile", "age": "age_radius"}


def edit_direction(attribute: str, profile: Profile) -> EditDirection:
    """Unit-norm direction whose application changes only the named attribute."""
    if attribute not in EDIT_ATTRIBUTES:
        raise ConfigurationError(
            f"unknown edit attribute {attribute!r}; choose from {sorted(EDIT_ATTRIBUTES)}"
        )
    row = FACTOR_NAMES.index(EDIT_ATTRIBUTES[attribute])
    a = factor_matrix(profile)
    delta = a[row].reshape(profile.wplus_shape).astype(np.float32)
    return EditDirection(delta=delta, attribute_name=attribute)


def apply_edit(w: WPlusEmbedding, direction: EditDirection, alpha: float) -> WPlusEmbedding:
    """Return w + alpha * delta (w is not modified)."""
    return WPlusEmbedding(w.vectors + np.float32(alpha) * direction.delta)


def _check_profile(w: WPlusEmbedding, profile: Profile) -> None:
    if w.shape != profile.wplus_shape:
        raise ShapeError(
            f"w+ shape {w.shape} does not match profile {profile.name!r} {profile.wplus_shape}"
        )
