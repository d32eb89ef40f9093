"""Caption grammar for wild samples, plus the neutral face templates.

The grammar is deliberately tiny (2 expressions x 8 colors x 3 positions) so
the full vocabulary, phrases included, stays under 32 tokens.
"""

from __future__ import annotations

from ..errors import ValidationError

EXPRESSIONS = ("smile", "neutral")
COLOR_NAMES = ("red", "orange", "yellow", "green", "cyan", "blue", "purple", "magenta")
POSITIONS = ("left", "center", "right")

# Hue of each named background color, evenly spaced on the wheel.
COLOR_HUES = {name: i / len(COLOR_NAMES) for i, name in enumerate(COLOR_NAMES)}

# Smile factor above which a face is captioned as smiling.
SMILE_WORD_THRESHOLD = 0.2

NEUTRAL_TEMPLATES = (
    "a face",
    "a photo of a face",
    "a close-up of a face",
    "a depiction of a face",
    "a good photo of a face",
    "a photography of a face",
    "a cropped photo of a face",
    "a good photography of a face",
    "a close-up photography of a face",
)


def expression_word(smile: float) -> str:
    return "smile" if smile > SMILE_WORD_THRESHOLD else "neutral"


def build_caption(expression: str, color: str, position: str) -> str:
    if expression not in EXPRESSIONS:
        raise ValidationError(f"unknown expression {expression!r}")
    if color not in COLOR_NAMES:
        raise ValidationError(f"unknown color {color!r}")
    if position not in POSITIONS:
        raise ValidationError(f"unknown position {position!r}")
    return f"a face with a {expression} expression on a {color} background at the {position}"


def parse_caption(caption: str) -> tuple[str, str, str]:
    """Inverse of build_caption; raises ValidationError if the string is off-grammar."""
    words = caption.split()
    for expression in EXPRESSIONS:
        for color in COLOR_NAMES:
            for position in POSITIONS:
                if build_caption(expression, color, position).split() == words:
                    return expression, color, position
    raise ValidationError(f"caption does not parse under the grammar: {caption!r}")
