"""Synthetic face world: analytic generator, factor oracles, and wild-sample data."""

from .captions import (
    COLOR_NAMES,
    EXPRESSIONS,
    NEUTRAL_TEMPLATES,
    POSITIONS,
    build_caption,
    expression_word,
    parse_caption,
)
from .compose import WildSample, build_mask, compose_wild
from .data import (
    Stage1Dataset,
    Stage2Dataset,
    load_stage1,
    load_stage2,
    make_stage1,
    make_stage2,
    read_wplus_bin,
    write_wplus_bin,
)
from .extract import extract_factors
from .factors import (
    ATTRIBUTE_FACTORS,
    EDIT_ATTRIBUTES,
    FACTOR_NAMES,
    FACTOR_RANGES,
    IDENTITY_FACTORS,
    EditDirection,
    FactorVector,
    WPlusEmbedding,
    apply_edit,
    edit_direction,
    factor_matrix,
    factors_of,
    sample_wplus,
    squash,
    unsquash,
)
from .render import mouth_bbox, render_face, render_from_factors

__all__ = [
    "ATTRIBUTE_FACTORS",
    "COLOR_NAMES",
    "EDIT_ATTRIBUTES",
    "EXPRESSIONS",
    "EditDirection",
    "FACTOR_NAMES",
    "FACTOR_RANGES",
    "FactorVector",
    "IDENTITY_FACTORS",
    "NEUTRAL_TEMPLATES",
    "POSITIONS",
    "Stage1Dataset",
    "Stage2Dataset",
    "WPlusEmbedding",
    "WildSample",
    "apply_edit",
    "build_caption",
    "build_mask",
    "compose_wild",
    "edit_direction",
    "expression_word",
    "extract_factors",
    "factor_matrix",
    "factors_of",
    "load_stage1",
    "load_stage2",
    "make_stage1",
    "make_stage2",
    "mouth_bbox",
    "parse_caption",
    "read_wplus_bin",
    "render_face",
    "render_from_factors",
    "sample_wplus",
    "squash",
    "unsquash",
    "write_wplus_bin",
]
