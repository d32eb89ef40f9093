"""Deterministic face renderer.

A face is a hard-edged colored disk on mid-gray, with two dark eye blobs and a
dark mouth stroke whose curvature tracks the smile factor.  All feature blobs
are truncated Gaussians, so a smile change provably touches no pixel outside
:func:`mouth_bbox`, and the disk itself is a pure pixel-center-inside test so
area-based radius recovery is exact up to rasterization.
"""

from __future__ import annotations

import colorsys

import numpy as np

from ..profiles import Profile
from .factors import FactorVector, WPlusEmbedding, factors_of

BACKGROUND_GRAY = 0.5
FACE_SATURATION = 0.75
FACE_VALUE = 0.85
DARKNESS_DEPTH = 0.8          # max fractional darkening applied by features
BASE_RADIUS = 15.0            # face radius in px per unit age_radius, 32px canvas

EYE_Y = -0.45                 # feature offsets as fractions of the radius
EYE_SPACING_BASE = 0.18
EYE_SPACING_GAIN = 0.35
EYE_AMPLITUDE = 0.9
MOUTH_Y = 0.48
MOUTH_HALF_WIDTH = 0.40
MOUTH_CURVE = 0.16
MOUTH_SAMPLES = 25
MOUTH_AMPLITUDE = 0.8
BLOB_TRUNCATION = 4.5         # in sigmas; beyond this a blob contributes exactly 0


def _sigma_eye(radius: float) -> float:
    return max(0.55, 0.085 * radius)


def _sigma_mouth(radius: float) -> float:
    return max(0.5, 0.075 * radius)


def _truncated_blob(xx, yy, cx, cy, sigma):
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    cut = (BLOB_TRUNCATION * sigma) ** 2
    g = np.exp(-0.5 * d2 / sigma**2)
    g[d2 > cut] = 0.0
    return g


def mouth_arc_points(radius: float, smile: float, cx: float, cy: float) -> np.ndarray:
    """(n, 2) array of (x, y) sample points along the mouth stroke."""
    u = np.linspace(-1.0, 1.0, MOUTH_SAMPLES)
    x = cx + MOUTH_HALF_WIDTH * radius * u
    # (u^2 - 1/3) is zero-mean over u, so the stroke's mean height is smile-invariant
    y = cy + MOUTH_Y * radius - MOUTH_CURVE * radius * smile * (u**2 - 1.0 / 3.0)
    return np.stack([x, y], axis=1)


def feature_darkness_at(
    xx: np.ndarray,
    yy: np.ndarray,
    cx: float,
    cy: float,
    radius: float,
    eye_spacing: float,
    smile: float,
) -> np.ndarray:
    """Darkness in [0, 1] contributed by eyes and mouth at arbitrary pixel coords."""
    sig_e = _sigma_eye(radius)
    sig_m = _sigma_mouth(radius)

    half_sep = (EYE_SPACING_BASE + EYE_SPACING_GAIN * eye_spacing) * radius
    eye_cy = cy + EYE_Y * radius
    d = EYE_AMPLITUDE * _truncated_blob(xx, yy, cx - half_sep, eye_cy, sig_e)
    d += EYE_AMPLITUDE * _truncated_blob(xx, yy, cx + half_sep, eye_cy, sig_e)

    pts = mouth_arc_points(radius, smile, cx, cy)
    spacing = 2.0 * MOUTH_HALF_WIDTH * radius / (MOUTH_SAMPLES - 1)
    amp = MOUTH_AMPLITUDE * spacing / (np.sqrt(2.0 * np.pi) * sig_m)
    for px, py in pts:
        d += amp * _truncated_blob(xx, yy, px, py, sig_m)

    return np.clip(d, 0.0, 1.0)


def feature_darkness(
    shape: tuple[int, int],
    cx: float,
    cy: float,
    radius: float,
    eye_spacing: float,
    smile: float,
) -> np.ndarray:
    """Darkness field in [0, 1] over a full pixel grid (before masking to the disk)."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    return feature_darkness_at(xx, yy, cx, cy, radius, eye_spacing, smile)


def face_radius_px(age_radius: float, size: int) -> float:
    return BASE_RADIUS * age_radius * (size / 32.0)


def render_from_factors(factors: FactorVector, size: int = 32) -> np.ndarray:
    """Render a face image (size, size, 3) float32 in [0, 1] from factor values."""
    cx = cy = (size - 1) / 2.0
    radius = face_radius_px(factors.age_radius, size)

    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    disk = (xx - cx) ** 2 + (yy - cy) ** 2 <= radius**2

    rgb = np.array(colorsys.hsv_to_rgb(factors.hue % 1.0, FACE_SATURATION, FACE_VALUE))
    dark = feature_darkness((size, size), cx, cy, radius, factors.eye_spacing, factors.smile)

    img = np.full((size, size, 3), BACKGROUND_GRAY, dtype=np.float64)
    shade = (1.0 - DARKNESS_DEPTH * dark)[..., None] * rgb[None, None, :]
    img[disk] = shade[disk]
    return img.astype(np.float32)


def render_face(w: WPlusEmbedding, profile: Profile, size: int | None = None) -> np.ndarray:
    """Render the face of an embedding; pure function, no RNG."""
    return render_from_factors(factors_of(w, profile), size or profile.face_size)


def mouth_bbox(factors: FactorVector, size: int = 32) -> tuple[int, int, int, int]:
    """Pixel rect (x0, y0, x1, y1), exclusive upper bounds, containing every pixel the
    mouth stroke can touch for any smile value at these non-smile factors."""
    cx = cy = (size - 1) / 2.0
    radius = face_radius_px(factors.age_radius, size)
    sig = _sigma_mouth(radius)
    reach = BLOB_TRUNCATION * sig
    span_x = MOUTH_HALF_WIDTH * radius + reach
    # deflection over smile in [-1, 1]: +/- MOUTH_CURVE * max(1/3, 2/3) * radius
    span_y = MOUTH_CURVE * (2.0 / 3.0) * radius + reach
    x0 = int(np.floor(cx - span_x))
    x1 = int(np.ceil(cx + span_x)) + 1
    y0 = int(np.floor(cy + MOUTH_Y * radius - span_y))
    y1 = int(np.ceil(cy + MOUTH_Y * radius + span_y)) + 1
    return (max(x0, 0), max(y0, 0), min(x1, size), min(y1, size))
