"""Named-tensor checkpoint archives.

One file = magic line, u64 header length, JSON header (plain text, includes
the tensor manifest as name/dtype/shape/byte-offset records), then the raw
little-endian tensor payload.  Round-trips are bit-exact and the file content
is fully determined by the saved state, so same-seed runs produce identical
bytes.

The base model and the adapter are separate archives; adapter loading
validates layer count and dims against the base model it is meant to plug
into.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np
import torch

from .adapter import AdapterLayer, IdentityAdapter, MappingNetwork
from .errors import ConfigurationError, ValidationError
from .model import BaseModel
from .profiles import Profile, get_profile
from .schedule import linear_schedule
from .text import TextEncoder, vocabulary_sha256

MAGIC = b"WADAPTER-CKPT v1\n"

_DTYPES = {"float32": np.float32, "float64": np.float64, "int64": np.int64}


def _write_archive(path: Path, header: dict, tensors: dict[str, torch.Tensor]) -> None:
    manifest = []
    payload = bytearray()
    for name in sorted(tensors):
        t = tensors[name].detach().cpu().contiguous()
        arr = t.numpy()
        if arr.dtype.name not in _DTYPES:
            raise ValidationError(f"unsupported tensor dtype {arr.dtype} for {name!r}")
        raw = arr.astype(arr.dtype.newbyteorder("<")).tobytes()
        manifest.append(
            {
                "name": name,
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": len(payload),
                "nbytes": len(raw),
            }
        )
        payload.extend(raw)
    header = dict(header)
    header["manifest"] = manifest
    blob = json.dumps(header, sort_keys=True, indent=1).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<Q", len(blob)))
        f.write(blob)
        f.write(bytes(payload))


def _read_archive(path: Path) -> tuple[dict, dict[str, torch.Tensor]]:
    raw = Path(path).read_bytes()
    if not raw.startswith(MAGIC):
        raise ValidationError(f"{path}: not a checkpoint archive")
    off = len(MAGIC)
    (hlen,) = struct.unpack("<Q", raw[off : off + 8])
    off += 8
    header = json.loads(raw[off : off + hlen].decode())
    payload = raw[off + hlen :]
    tensors = {}
    for rec in header["manifest"]:
        dt = np.dtype(_DTYPES[rec["dtype"]]).newbyteorder("<")
        arr = np.frombuffer(
            payload, dtype=dt, count=int(np.prod(rec["shape"], dtype=np.int64)) if rec["shape"] else 1,
            offset=rec["offset"],
        )
        arr = arr.reshape(rec["shape"]).astype(_DTYPES[rec["dtype"]])
        tensors[rec["name"]] = torch.from_numpy(arr.copy())
    return header, tensors


def _profile_header(profile: Profile) -> dict:
    return dataclasses.asdict(profile)


def save_base_model(model: BaseModel, path: Path) -> None:
    tensors = {f"unet.{k}": v for k, v in model.unet.state_dict().items()}
    tensors |= {f"text.{k}": v for k, v in model.text_encoder.state_dict().items()}
    header = {
        "kind": "base",
        "profile": _profile_header(model.profile),
        "vocab_sha256": vocabulary_sha256(),
        "schedule": {
            "timesteps": model.schedule.timesteps,
            "beta_start": float(model.schedule.betas[0]),
            "beta_end": float(model.schedule.betas[-1]),
        },
    }
    _write_archive(Path(path), header, tensors)


def load_base_model(path: Path) -> BaseModel:
    header, tensors = _read_archive(Path(path))
    if header.get("kind") != "base":
        raise ConfigurationError(f"{path}: expected a base checkpoint, got {header.get('kind')!r}")
    if header["vocab_sha256"] != vocabulary_sha256():
        raise ConfigurationError(f"{path}: vocabulary hash mismatch")
    profile = get_profile(header["profile"]["name"])
    from .denoiser import Denoiser

    unet = Denoiser(profile)
    unet.load_state_dict(
        {k[len("unet.") :]: v for k, v in tensors.items() if k.startswith("unet.")}
    )
    text = TextEncoder(profile)
    text.load_state_dict(
        {k[len("text.") :]: v for k, v in tensors.items() if k.startswith("text.")}
    )
    sched = header["schedule"]
    schedule = linear_schedule(sched["timesteps"], sched["beta_start"], sched["beta_end"])
    return BaseModel(profile=profile, text_encoder=text, unet=unet, schedule=schedule)


def save_adapter(
    mapping: MappingNetwork, adapter: IdentityAdapter, path: Path, profile: Profile
) -> None:
    tensors = {f"mapping.{k}": v for k, v in mapping.state_dict().items()}
    tensors |= {f"adapter.{k}": v for k, v in adapter.state_dict().items()}
    header = {
        "kind": "adapter",
        "profile": _profile_header(profile),
        "layer_dims": [[layer.d_model, layer.d_ctx] for layer in adapter.layers],
        "train_scale": adapter.train_scale,
    }
    _write_archive(Path(path), header, tensors)


def load_adapter(path: Path, base: BaseModel) -> tuple[MappingNetwork, IdentityAdapter]:
    """Load an adapter archive and validate it against the base model's layers."""
    header, tensors = _read_archive(Path(path))
    if header.get("kind") != "adapter":
        raise ConfigurationError(f"{path}: expected an adapter checkpoint, got {header.get('kind')!r}")
    if header["profile"]["name"] != base.profile.name:
        raise ConfigurationError(
            f"{path}: adapter profile {header['profile']['name']!r} does not match base "
            f"{base.profile.name!r}"
        )
    crosses = base.unet.cross_attention_layers()
    dims = [list(d) for d in header["layer_dims"]]
    expected = [[c.d_model, c.d_ctx] for c in crosses]
    if dims != expected:
        raise ConfigurationError(
            f"{path}: adapter layer dims {dims} incompatible with base layers {expected}"
        )
    mapping = MappingNetwork(base.profile)
    mapping.load_state_dict(
        {k[len("mapping.") :]: v for k, v in tensors.items() if k.startswith("mapping.")}
    )
    adapter = IdentityAdapter(
        [AdapterLayer(d_model, d_ctx) for d_model, d_ctx in dims],
        train_scale=header.get("train_scale", 1.0),
    )
    adapter.load_state_dict(
        {k[len("adapter.") :]: v for k, v in tensors.items() if k.startswith("adapter.")}
    )
    return mapping, adapter
