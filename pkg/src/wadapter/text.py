"""Toy text conditioning: phrase tokenizer plus a frozen embedding table.

The tokenizer greedily matches multi-word phrases so that every grammar
caption fits in 8 tokens while the vocabulary stays under 32 entries.  The
embedding table is seeded once and never trained (it plays the role of a
pretrained text encoder); sinusoidal position codes are added on top.
"""

from __future__ import annotations

import hashlib

import numpy as np
import torch
from torch import nn

from .errors import TokenizationError
from .profiles import Profile

PAD_ID = 0

# Longest-match phrase vocabulary. Order in this tuple fixes token ids (offset
# by 1 for the pad token); matching always prefers the longest phrase.
PHRASES = (
    "a close-up photography of",
    "a good photography of",
    "a cropped photo of",
    "a photography of",
    "a good photo of",
    "a close-up of",
    "a depiction of",
    "a photo of",
    "a face with a",
    "a face",
    "expression on a",
    "background at the",
    "smile",
    "neutral",
    "red",
    "orange",
    "yellow",
    "green",
    "cyan",
    "blue",
    "purple",
    "magenta",
    "left",
    "center",
    "right",
)

VOCAB_SIZE = len(PHRASES) + 1  # +1 for pad

_PHRASE_WORDS = [p.split() for p in PHRASES]
_BY_LENGTH = sorted(range(len(PHRASES)), key=lambda i: -len(_PHRASE_WORDS[i]))

_EMBED_SEED = 0x7E87


def tokenize(caption: str, max_len: int = 8) -> list[int]:
    """Greedy longest-phrase tokenization; empty string gives all padding."""
    words = caption.split()
    ids: list[int] = []
    pos = 0
    while pos < len(words):
        for idx in _BY_LENGTH:
            pw = _PHRASE_WORDS[idx]
            if words[pos : pos + len(pw)] == pw:
                ids.append(idx + 1)
                pos += len(pw)
                break
        else:
            raise TokenizationError(f"cannot tokenize {caption!r} at word {words[pos]!r}")
    if len(ids) > max_len:
        raise TokenizationError(f"caption needs {len(ids)} tokens, max is {max_len}: {caption!r}")
    return ids + [PAD_ID] * (max_len - len(ids))


def detokenize(ids: list[int]) -> str:
    return " ".join(PHRASES[i - 1] for i in ids if i != PAD_ID)


def vocabulary_sha256() -> str:
    return hashlib.sha256("\n".join(PHRASES).encode()).hexdigest()


def _sinusoidal_positions(length: int, dim: int) -> np.ndarray:
    pos = np.arange(length)[:, None].astype(np.float64)
    i = np.arange(dim)[None, :].astype(np.float64)
    angle = pos / np.power(10000.0, (2 * (i // 2)) / dim)
    enc = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return enc


class TextEncoder(nn.Module):
    """Frozen token-embedding table with fixed sinusoidal positions."""

    def __init__(self, profile: Profile, seed: int = _EMBED_SEED):
        super().__init__()
        self.profile = profile
        gen = torch.Generator().manual_seed(seed)
        table = torch.randn(VOCAB_SIZE, profile.ctx_dim, generator=gen) * 0.5
        self.table = nn.Parameter(table, requires_grad=False)
        pos = torch.from_numpy(
            _sinusoidal_positions(profile.text_len, profile.ctx_dim)
        ).to(torch.float32) * 0.1
        self.register_buffer("positions", pos)

    def forward(self, token_ids: torch.Tensor) -> torch.Tensor:
        """(B, L) int64 ids -> (B, L, ctx_dim) embeddings."""
        emb = self.table[token_ids]
        return emb + self.positions.to(emb.dtype)

    def encode(self, caption: str) -> torch.Tensor:
        """Single caption -> (L, ctx_dim); '' yields the null condition."""
        ids = torch.tensor(tokenize(caption, self.profile.text_len), dtype=torch.long)
        return self.forward(ids[None])[0]

    def encode_batch(self, captions: list[str]) -> torch.Tensor:
        ids = torch.tensor(
            [tokenize(c, self.profile.text_len) for c in captions], dtype=torch.long
        )
        return self.forward(ids)

    def null_condition(self) -> torch.Tensor:
        return self.encode("")
