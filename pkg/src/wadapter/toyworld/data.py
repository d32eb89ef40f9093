"""Dataset generation and on-disk layout.

Layout:
    <root>/stage1/{images/*.png, wplus.bin, index.tsv}
    <root>/stage2/{images/*.png, masks/*.png, wplus.bin, captions.tsv}

wplus.bin is little-endian float32, row-major, preceded by a 16-byte header:
magic b"WPLS", then u32 version, u32 n_styles, u32 style_dim.  Masks are 8-bit
grayscale PNGs with 0 on the face region.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from ..errors import ValidationError
from ..profiles import Profile
from .captions import COLOR_NAMES, POSITIONS
from .compose import WildSample, compose_wild
from .factors import WPlusEmbedding, sample_wplus
from .render import render_face

WPLUS_MAGIC = b"WPLS"
WPLUS_VERSION = 1


def write_wplus_bin(path: Path, embeddings: list[WPlusEmbedding]) -> None:
    if not embeddings:
        raise ValidationError("refusing to write empty wplus.bin")
    n_styles, style_dim = embeddings[0].shape
    with open(path, "wb") as f:
        f.write(WPLUS_MAGIC)
        f.write(struct.pack("<III", WPLUS_VERSION, n_styles, style_dim))
        for emb in embeddings:
            if emb.shape != (n_styles, style_dim):
                raise ValidationError("inconsistent w+ shapes in one file")
            f.write(np.ascontiguousarray(emb.vectors, dtype="<f4").tobytes())


def read_wplus_bin(path: Path) -> list[WPlusEmbedding]:
    raw = Path(path).read_bytes()
    if raw[:4] != WPLUS_MAGIC:
        raise ValidationError(f"{path}: bad magic {raw[:4]!r}")
    version, n_styles, style_dim = struct.unpack("<III", raw[4:16])
    if version != WPLUS_VERSION:
        raise ValidationError(f"{path}: unsupported version {version}")
    body = np.frombuffer(raw[16:], dtype="<f4")
    per = n_styles * style_dim
    if body.size % per != 0:
        raise ValidationError(f"{path}: payload size {body.size} not a multiple of {per}")
    return [
        WPlusEmbedding(body[i * per : (i + 1) * per].reshape(n_styles, style_dim).copy())
        for i in range(body.size // per)
    ]


def save_png(path: Path, image: np.ndarray) -> None:
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    Image.fromarray(np.round(arr * 255.0).astype(np.uint8)).save(path)


def load_png(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path), dtype=np.float32) / 255.0


@dataclass
class Stage1Dataset:
    images: np.ndarray          # (N, S, S, 3) float32
    wplus: list[WPlusEmbedding]

    def __len__(self) -> int:
        return len(self.wplus)


@dataclass
class Stage2Dataset:
    images: np.ndarray          # (N, S, S, 3) float32
    masks: np.ndarray           # (N, S, S) float32
    captions: list[str]
    wplus: list[WPlusEmbedding]

    def __len__(self) -> int:
        return len(self.wplus)


def make_stage1(root: Path, n: int, profile: Profile, seed: int = 0) -> Path:
    """Write n (face image, w+) pairs under <root>/stage1."""
    out = Path(root) / "stage1"
    (out / "images").mkdir(parents=True, exist_ok=True)
    embeddings = []
    with open(out / "index.tsv", "w") as idx:
        idx.write("idx\timage\n")
        for i in range(n):
            w = sample_wplus(seed * 1_000_003 + i, profile)
            embeddings.append(w)
            name = f"{i:05d}.png"
            save_png(out / "images" / name, render_face(w, profile))
            idx.write(f"{i}\timages/{name}\n")
    write_wplus_bin(out / "wplus.bin", embeddings)
    return out


def make_stage2(root: Path, n: int, profile: Profile, seed: int = 0) -> Path:
    """Write n wild samples (image, mask, caption, w+) under <root>/stage2."""
    out = Path(root) / "stage2"
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed + 7)
    embeddings = []
    with open(out / "captions.tsv", "w") as cap:
        cap.write("idx\timage\tmask\tcaption\n")
        for i in range(n):
            w = sample_wplus(seed * 2_000_003 + i, profile)
            face = render_face(w, profile)
            spec = (
                COLOR_NAMES[int(rng.integers(len(COLOR_NAMES)))],
                POSITIONS[int(rng.integers(len(POSITIONS)))],
            )
            sample = compose_wild(
                face, spec, rng_seed=int(rng.integers(2**31)), wplus=w, canvas=profile.wild_size
            )
            embeddings.append(w)
            img_name = f"{i:05d}.png"
            save_png(out / "images" / img_name, sample.image)
            save_png(out / "masks" / img_name, sample.mask)
            cap.write(f"{i}\timages/{img_name}\tmasks/{img_name}\t{sample.caption}\n")
    write_wplus_bin(out / "wplus.bin", embeddings)
    return out


def load_stage1(root: Path) -> Stage1Dataset:
    d = Path(root) / "stage1" if (Path(root) / "stage1").is_dir() else Path(root)
    wplus = read_wplus_bin(d / "wplus.bin")
    rows = [ln.split("\t") for ln in (d / "index.tsv").read_text().splitlines()[1:]]
    images = np.stack([load_png(d / r[1]) for r in rows])
    return Stage1Dataset(images=images, wplus=wplus)


def load_stage2(root: Path) -> Stage2Dataset:
    d = Path(root) / "stage2" if (Path(root) / "stage2").is_dir() else Path(root)
    wplus = read_wplus_bin(d / "wplus.bin")
    rows = [ln.split("\t") for ln in (d / "captions.tsv").read_text().splitlines()[1:]]
    images = np.stack([load_png(d / r[1]) for r in rows])
    masks = np.stack([load_png(d / r[2]) for r in rows])
    captions = [r[3] for r in rows]
    return Stage2Dataset(images=images, masks=masks, captions=captions, wplus=wplus)
