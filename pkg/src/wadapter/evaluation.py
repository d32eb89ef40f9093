"""Toy-world analogs of identity / prompt / detection metrics.

Every judge here is an analytic classifier on top of the factor extractor, so
no learned component sits in the acceptance path.  TAU_ID is frozen from a
one-off threshold sweep over rendered pairs (see tests) and is never tuned
against a model under evaluation.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
from scipy.stats import binomtest

from .adapter import MappingNetwork, map_wplus
from .errors import ConfigurationError, ShapeError, ValidationError
from .sampler import SamplerConfig, ddim_sample_batch
from .model import BaseModel
from .toyworld.captions import (
    COLOR_HUES,
    COLOR_NAMES,
    POSITIONS,
    SMILE_WORD_THRESHOLD,
    build_caption,
    parse_caption,
)
from .toyworld.compose import build_mask
from .toyworld.extract import _detect_disk, _hue, _saturation_value, extract_factors
from .toyworld.factors import FactorVector, sample_wplus
from .toyworld.render import render_face

# Frozen identity threshold: midpoint between the same-identity p99 distance and
# half the distinct-identity (hue >= 0.3 apart) p1 distance from the oracle sweep.
TAU_ID = 0.075


def _circular_diff(a: float, b: float) -> float:
    d = abs(a - b) % 1.0
    return min(d, 1.0 - d)


def identity_factor_distance(fa: FactorVector, fb: FactorVector) -> float:
    """Euclidean over (hue, eye_spacing) with hue on the circle metric."""
    return float(
        np.hypot(_circular_diff(fa.hue, fb.hue), fa.eye_spacing - fb.eye_spacing)
    )


def identity_distance(img_a: np.ndarray, img_b: np.ndarray) -> float | None:
    """Identity-factor distance between two images; None if either face is undetected."""
    fa = extract_factors(img_a)
    fb = extract_factors(img_b)
    if fa is None or fb is None:
        return None
    return identity_factor_distance(fa, fb)


def _background_hue(img: np.ndarray, face_bbox: tuple[int, int, int, int] | None) -> float | None:
    s, _ = _saturation_value(img)
    keep = s > 0.15
    if face_bbox is not None:
        x0, y0, x1, y1 = face_bbox
        pad = 2
        keep = keep.copy()
        keep[max(y0 - pad, 0) : y1 + pad, max(x0 - pad, 0) : x1 + pad] = False
    if not keep.any():
        return None
    ang = 2.0 * np.pi * _hue(img)[keep]
    return float((np.arctan2(np.sin(ang).mean(), np.cos(ang).mean()) / (2 * np.pi)) % 1.0)


def _detected_bbox(img: np.ndarray) -> tuple[int, int, int, int] | None:
    found = _detect_disk(np.asarray(img, dtype=np.float64))
    if found is None:
        return None
    mask = found[0]
    ys, xs = np.nonzero(mask)
    return int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1


def prompt_consistency(img: np.ndarray, caption: str) -> float:
    """Fraction of the caption's three facts (color, position, expression) the image verifies."""
    expression, color, position = parse_caption(caption)
    img = np.asarray(img, dtype=np.float64)
    facts = 0

    bbox = _detected_bbox(img)
    bg_hue = _background_hue(img, bbox)
    if bg_hue is not None:
        nearest = min(COLOR_NAMES, key=lambda c: _circular_diff(COLOR_HUES[c], bg_hue))
        facts += nearest == color

    factors = extract_factors(img)
    if factors is not None and bbox is not None:
        cx = (bbox[0] + bbox[2]) / 2.0
        third = img.shape[1] / 3.0
        slot = POSITIONS[min(2, int(cx // third))]
        facts += slot == position
        word = "smile" if factors.smile > SMILE_WORD_THRESHOLD else "neutral"
        facts += word == expression

    return facts / 3.0


def detection_rate(images: list[np.ndarray] | np.ndarray) -> float:
    if len(images) == 0:
        raise ValidationError("detection_rate needs a nonempty image set")
    hits = sum(extract_factors(img) is not None for img in images)
    return hits / len(images)


def background_change(img_a: np.ndarray, img_b: np.ndarray, mask: np.ndarray) -> float:
    """Mask-weighted mean absolute pixel difference (mask = 1 on non-face regions)."""
    a = np.asarray(img_a, dtype=np.float64)
    b = np.asarray(img_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"image shapes differ: {a.shape} vs {b.shape}")
    m = np.asarray(mask, dtype=np.float64)
    if m.shape != a.shape[:2]:
        raise ShapeError(f"mask shape {m.shape} does not match images {a.shape[:2]}")
    denom = float(m.sum())
    if denom == 0.0:
        return 0.0
    diff = np.abs(a - b).mean(axis=2)
    return float((m * diff).sum() / denom)


def paired_sign_test(a: list[float], b: list[float]) -> float:
    """One-sided sign-test p-value for the hypothesis that a tends below b."""
    wins = sum(1 for x, y in zip(a, b) if x < y)
    decided = sum(1 for x, y in zip(a, b) if x != y)
    if decided == 0:
        return 1.0
    return float(binomtest(wins, decided, 0.5, alternative="greater").pvalue)


def eval_prompts(n: int = 8, seed: int = 123) -> list[str]:
    """Deterministic selection of n distinct grammar captions."""
    rng = np.random.default_rng(seed)
    combos = [
        (e, c, p)
        for e in ("neutral", "smile")
        for c in COLOR_NAMES
        for p in POSITIONS
    ]
    picks = rng.choice(len(combos), size=n, replace=False)
    return [build_caption(*combos[int(i)]) for i in picks]


@dataclass
class EvalRow:
    identity_seed: int
    prompt: str
    sample_seed: int
    detected: bool
    id_distance: float | None
    prompt_consistency: float
    background_change: float | None


@dataclass
class EvalReport:
    rows: list[EvalRow]
    id_distance: float
    prompt_consistency: float
    detection_rate: float
    background_change: float

    def to_tsv(self) -> str:
        lines = ["identity_seed\tprompt\tsample_seed\tdetected\tid_distance\tprompt_consistency\tbackground_change"]
        for r in self.rows:
            idd = "nan" if r.id_distance is None else f"{r.id_distance:.6f}"
            bgc = "nan" if r.background_change is None else f"{r.background_change:.6f}"
            lines.append(
                f"{r.identity_seed}\t{r.prompt}\t{r.sample_seed}\t{int(r.detected)}"
                f"\t{idd}\t{r.prompt_consistency:.6f}\t{bgc}"
            )
        lines.append("")
        lines.append("# summary")
        lines.append(f"id_distance\t{self.id_distance:.6f}")
        lines.append(f"prompt_consistency\t{self.prompt_consistency:.6f}")
        lines.append(f"detection_rate\t{self.detection_rate:.6f}")
        lines.append(f"background_change\t{self.background_change:.6f}")
        return "\n".join(lines) + "\n"

    def write(self, path: Path) -> None:
        Path(path).write_text(self.to_tsv())


def run_eval(
    model: BaseModel,
    mapping: MappingNetwork,
    identity_seeds: list[int],
    prompts: list[str],
    config: SamplerConfig,
    out_path: Path | None = None,
    batch_size: int = 16,
) -> EvalReport:
    """Sample the full identity x prompt grid and score it.

    For each cell, a paired sample at identity scale 0 (same seed) provides the
    background-change reference: how much the identity condition disturbs the
    regions outside the detected face.
    """
    if not model.unet.adapter_attached:
        raise ConfigurationError("run_eval requires the adapter checkpoint to be attached")
    if mapping.profile.name != model.profile.name:
        raise ConfigurationError(
            f"mapping profile {mapping.profile.name!r} does not match model "
            f"{model.profile.name!r}"
        )

    cells = [
        (iid, prompt, config.seed + 7919 * i + j)
        for i, iid in enumerate(identity_seeds)
        for j, prompt in enumerate(prompts)
    ]
    tokens = {
        iid: map_wplus(mapping, sample_wplus(iid, model.profile))
        for iid in identity_seeds
    }
    refs = {
        iid: render_face(sample_wplus(iid, model.profile), model.profile)
        for iid in identity_seeds
    }

    images: list[np.ndarray] = []
    images_noid: list[np.ndarray] = []
    for start in range(0, len(cells), batch_size):
        chunk = cells[start : start + batch_size]
        toks = torch.stack([tokens[iid] for iid, _, _ in chunk])
        caps = [prompt for _, prompt, _ in chunk]
        seeds = [seed for _, _, seed in chunk]
        images.extend(ddim_sample_batch(model, caps, toks, config, seeds=seeds))
        cfg0 = SamplerConfig(
            steps=config.steps,
            guidance_scale=config.guidance_scale,
            eta=config.eta,
            identity_scale=0.0,
            seed=config.seed,
            image_size=config.image_size,
        )
        images_noid.extend(ddim_sample_batch(model, caps, toks, cfg0, seeds=seeds))

    rows = []
    for (iid, prompt, seed), img, img0 in zip(cells, images, images_noid):
        factors = extract_factors(img)
        detected = factors is not None
        idd = identity_distance(img, refs[iid]) if detected else None
        cons = prompt_consistency(img, prompt)
        bbox = _detected_bbox(img)
        bgc = None
        if bbox is not None:
            mask = build_mask(img.shape[:2], bbox)
            bgc = background_change(img, img0, mask)
        rows.append(
            EvalRow(
                identity_seed=iid,
                prompt=prompt,
                sample_seed=seed,
                detected=detected,
                id_distance=idd,
                prompt_consistency=cons,
                background_change=bgc,
            )
        )

    def _mean(vals):
        vals = [v for v in vals if v is not None]
        return float(np.mean(vals)) if vals else float("nan")

    report = EvalReport(
        rows=rows,
        id_distance=_mean([r.id_distance for r in rows]),
        prompt_consistency=float(np.mean([r.prompt_consistency for r in rows])),
        detection_rate=float(np.mean([r.detected for r in rows])),
        background_change=_mean([r.background_change for r in rows]),
    )
    if out_path is not None:
        report.write(out_path)
    return report
