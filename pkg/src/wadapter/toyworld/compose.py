"""Wild-sample composition: paste a rendered face onto a captioned background.

The mask follows the convention 0 = face region, 1 = elsewhere; its zero
region is the face bbox rect, grown by a small erosion and softened by a box
blur, mirroring how alignment-derived masks are post-processed at full scale
(kernels 2 and 3 here are the 32 and 7 of a 1024px pipeline scaled to 64px).
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from ..errors import GenerationError, ValidationError
from .captions import COLOR_HUES, COLOR_NAMES, POSITIONS, build_caption, expression_word
from .extract import SATURATION_THRESHOLD, _saturation_value, extract_factors
from .factors import WPlusEmbedding

BACKGROUND_SATURATION = 0.35
BACKGROUND_VALUE = 0.55
EROSION_KERNEL = 2
BLUR_KERNEL = 3
PLACEMENT_JITTER = 3
MAX_PLACEMENT_TRIES = 100


@dataclass
class WildSample:
    image: np.ndarray                      # (H, W, 3) float32 in [0, 1]
    face_bbox: tuple[int, int, int, int]   # x0, y0, x1, y1 (exclusive)
    mask: np.ndarray                       # (H, W) float32, 0 = face
    caption: str
    wplus: WPlusEmbedding | None = None


def background_rgb(color: str) -> np.ndarray:
    if color not in COLOR_NAMES:
        raise ValidationError(f"unknown background color {color!r}")
    return np.array(
        colorsys.hsv_to_rgb(COLOR_HUES[color], BACKGROUND_SATURATION, BACKGROUND_VALUE),
        dtype=np.float64,
    )


def build_mask(shape: tuple[int, int], bbox: tuple[int, int, int, int]) -> np.ndarray:
    """0 inside the face rect, 1 elsewhere, then eroded and box-blurred."""
    x0, y0, x1, y1 = bbox
    mask = np.ones(shape, dtype=np.float64)
    mask[y0:y1, x0:x1] = 0.0
    mask = ndimage.minimum_filter(mask, size=EROSION_KERNEL, mode="nearest")
    mask = ndimage.uniform_filter(mask, size=BLUR_KERNEL, mode="nearest")
    return mask.astype(np.float32)


def compose_wild(
    face: np.ndarray,
    bg_spec: tuple[str, str],
    rng_seed: int,
    wplus: WPlusEmbedding | None = None,
    canvas: int = 64,
) -> WildSample:
    """Place a rendered face on a colored canvas and caption the result.

    bg_spec is (color_name, position_name).  Placement is jittered around the
    position anchor and rejection-resampled until the face disk fits; after
    MAX_PLACEMENT_TRIES failures a GenerationError is raised.
    """
    color, position = bg_spec
    if position not in POSITIONS:
        raise ValidationError(f"unknown position {position!r}")
    bg = background_rgb(color)

    face = np.asarray(face, dtype=np.float64)
    fh, fw = face.shape[:2]
    sat, _ = _saturation_value(face)
    disk = sat > SATURATION_THRESHOLD
    if not disk.any():
        raise ValidationError("face image contains no face disk")
    ys, xs = np.nonzero(disk)
    bx0, bx1 = int(xs.min()), int(xs.max()) + 1
    by0, by1 = int(ys.min()), int(ys.max()) + 1

    anchor_x = round((canvas - fw) * {"left": 0.0, "center": 0.5, "right": 1.0}[position])
    anchor_y = (canvas - fh) // 2

    rng = np.random.default_rng(int(rng_seed))
    for _ in range(MAX_PLACEMENT_TRIES):
        x_off = anchor_x + int(rng.integers(-PLACEMENT_JITTER, PLACEMENT_JITTER + 1))
        y_off = anchor_y + int(rng.integers(-PLACEMENT_JITTER, PLACEMENT_JITTER + 1))
        bbox = (x_off + bx0, y_off + by0, x_off + bx1, y_off + by1)
        if bbox[0] >= 0 and bbox[1] >= 0 and bbox[2] <= canvas and bbox[3] <= canvas:
            break
    else:
        raise GenerationError(
            f"could not place face in {canvas}x{canvas} canvas after {MAX_PLACEMENT_TRIES} tries"
        )

    image = np.tile(bg, (canvas, canvas, 1))
    sub_face = face[by0:by1, bx0:bx1]
    sub_disk = disk[by0:by1, bx0:bx1]
    region = image[bbox[1] : bbox[3], bbox[0] : bbox[2]]
    region[sub_disk] = sub_face[sub_disk]

    factors = extract_factors(face)
    if factors is None:
        raise ValidationError("face image failed factor extraction; cannot caption")
    caption = build_caption(expression_word(factors.smile), color, position)

    mask = build_mask((canvas, canvas), bbox)
    return WildSample(
        image=image.astype(np.float32),
        face_bbox=bbox,
        mask=mask,
        caption=caption,
        wplus=wplus,
    )
