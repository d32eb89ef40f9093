"""Two-stage adapter training.

Stage 1 aligns the w+ space with the denoiser on aligned face images under
neutral prompts, training the mapping network and all adapter projections.
Stage 2 fine-tunes only the adapter projections on wild samples with the
reconstruction / disentanglement / regularization losses; the mapping network
stays frozen and the base denoiser is frozen throughout.

The three stage-2 loss terms share one (z_t, t, eps) draw per sample so the
masked difference terms compare like with like.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .adapter import IdentityAdapter, MappingNetwork, build_mapping_network, init_adapter
from .checkpoint import save_adapter
from .errors import ConfigurationError, ValidationError
from .model import BaseModel, images_to_latents
from .schedule import add_noise
from .toyworld.captions import NEUTRAL_TEMPLATES
from .toyworld.data import Stage1Dataset, Stage2Dataset

logger = logging.getLogger(__name__)

AUGMENTATION_MODES = ("identity", "batch_shuffle", "gaussian_perturb", "both")


@dataclass(frozen=True)
class LossWeights:
    gamma1: float = 1.5
    gamma2: float = 1.0

    def __post_init__(self):
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValidationError("loss weights must be nonnegative")


@dataclass(frozen=True)
class AugmentationOp:
    mode: str = "both"
    sigma: float = 0.1

    def __post_init__(self):
        if self.mode not in AUGMENTATION_MODES:
            raise ConfigurationError(f"unknown augmentation mode {self.mode!r}")


@dataclass
class TrainConfig:
    batch_size: int = 16
    lr: float = 1e-4
    weight_decay: float = 0.01
    cond_drop_prob: float = 0.05
    pretrain_steps: int = 4000
    pretrain_lr: float = 1e-3
    stage1_steps: int = 2000
    stage2_steps: int = 1200
    gamma1: float = 1.5
    gamma2: float = 1.0
    aug_mode: str = "both"
    aug_sigma: float = 0.1
    seed: int = 0
    log_every: int = 1
    checkpoint_every: int = 0   # 0 = final checkpoint only
    stop_grad_aux: bool = False

    def __post_init__(self):
        if not (0.0 <= self.cond_drop_prob < 1.0):
            raise ValidationError("cond_drop_prob must lie in [0, 1)")


@dataclass
class ReportRow:
    step: int
    rec: float
    disen: float
    reg: float
    total: float
    lr: float
    wallclock_ms: float

    def line(self) -> str:
        return (
            f"{self.step}\t{self.rec:.6f}\t{self.disen:.6f}\t{self.reg:.6f}"
            f"\t{self.total:.6f}\t{self.lr:.6g}\t{self.wallclock_ms:.1f}"
        )


@dataclass
class TrainReport:
    stage: int
    rows: list[ReportRow] = field(default_factory=list)
    checkpoint_path: Path | None = None
    duration_s: float = 0.0

    def smoothed(self, window: int, end: bool = False) -> float:
        vals = [r.total for r in (self.rows[-window:] if end else self.rows[:window])]
        return float(np.mean(vals))

    def write_tsv(self, path: Path) -> None:
        with open(path, "w") as f:
            f.write("step\tL_rec\tL_disen\tL_reg\ttotal\tlr\twallclock_ms\n")
            for row in self.rows:
                f.write(row.line() + "\n")


def _as_generator(seed_or_gen: int | torch.Generator) -> torch.Generator:
    if isinstance(seed_or_gen, torch.Generator):
        return seed_or_gen
    g = torch.Generator()
    g.manual_seed(int(seed_or_gen))
    return g


def _derangement(n: int, generator: torch.Generator) -> torch.Tensor:
    for _ in range(100):
        perm = torch.randperm(n, generator=generator)
        if not torch.any(perm == torch.arange(n)):
            return perm
    return torch.roll(torch.arange(n), 1)


def apply_augmentation(
    f_w: torch.Tensor, op: AugmentationOp, rng: int | torch.Generator
) -> torch.Tensor:
    """Augment a batch of identity tokens; identity mode is bit-exact."""
    if op.mode == "identity":
        return f_w.clone()
    g = _as_generator(rng)
    out = f_w
    mode = op.mode
    if mode in ("batch_shuffle", "both"):
        if f_w.shape[0] < 2:
            logger.warning("batch_shuffle with batch size 1; falling back to gaussian_perturb")
            mode = "gaussian_perturb"
        else:
            out = out[_derangement(f_w.shape[0], g)]
    if mode in ("gaussian_perturb", "both"):
        rms = out.detach().pow(2).mean(dim=-1, keepdim=True).sqrt()
        noise = torch.randn(out.shape, generator=g, dtype=out.dtype)
        out = out + noise * (op.sigma * rms)
    return out


def drop_conditions(
    text_emb: torch.Tensor,
    id_tokens: torch.Tensor,
    p: float,
    rng: int | torch.Generator,
    null_text: torch.Tensor,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Independently replace text with the null condition and identity tokens with
    zeros, each with probability p per sample (classifier-free guidance training)."""
    if not (0.0 <= p < 1.0):
        raise ValidationError("drop probability must lie in [0, 1)")
    g = _as_generator(rng)
    b = text_emb.shape[0]
    drop_text = torch.rand(b, generator=g) < p
    drop_id = torch.rand(b, generator=g) < p
    text_out = torch.where(
        drop_text[:, None, None], null_text.to(text_emb.dtype).unsqueeze(0), text_emb
    )
    id_out = torch.where(
        drop_id[:, None, None], torch.zeros_like(id_tokens), id_tokens
    )
    return text_out, id_out


def downsample_mask(mask: torch.Tensor, factor: int = 4) -> torch.Tensor:
    """(B, H, W) pixel mask -> (B, 1, H/f, W/f) latent mask by block averaging."""
    b, h, w = mask.shape
    m = mask.reshape(b, h // factor, factor, w // factor, factor).mean(dim=(2, 4))
    return m.unsqueeze(1)


def ldm_loss(
    model: BaseModel,
    images: np.ndarray,
    captions: list[str],
    rng: int | torch.Generator,
    cond_drop_prob: float = 0.0,
) -> torch.Tensor:
    """Text-only denoising MSE (the base model's own objective)."""
    g = _as_generator(rng)
    dtype = next(model.unet.parameters()).dtype
    z0 = images_to_latents(images, dtype)
    b = z0.shape[0]
    t = torch.randint(0, model.schedule.timesteps, (b,), generator=g)
    eps = torch.randn(z0.shape, generator=g, dtype=dtype)
    z_t = add_noise(z0, t, eps, model.schedule)
    text = model.text_encoder.encode_batch(captions).to(dtype)
    if cond_drop_prob > 0.0:
        drop = torch.rand(b, generator=g) < cond_drop_prob
        null = model.text_encoder.null_condition().to(dtype)
        text = torch.where(drop[:, None, None], null.unsqueeze(0), text)
    eps_hat = model.unet(z_t, t, text)
    return torch.mean((eps - eps_hat) ** 2)


def run_pretrain(
    config: TrainConfig,
    faces: Stage1Dataset,
    wild: Stage2Dataset,
    out_dir: Path | None,
    model: BaseModel,
) -> TrainReport:
    """Train the base denoiser and text table on the toy corpus (no identity input).

    This produces the frozen "pretrained" model that both adapter stages plug
    into; alternating steps draw aligned faces (with neutral prompts) and wild
    captioned composites so both resolutions are covered.
    """
    model.unet.requires_grad_(True)
    model.text_encoder.table.requires_grad_(True)
    params = list(model.unet.parameters()) + [model.text_encoder.table]
    opt = torch.optim.AdamW(params, lr=config.pretrain_lr, weight_decay=config.weight_decay)

    g = torch.Generator()
    g.manual_seed(config.seed * 1_000_003 + 7)
    report = TrainReport(stage=0)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    for step in range(1, config.pretrain_steps + 1):
        if step % 2 == 1:
            idx = torch.randint(0, len(wild), (config.batch_size,), generator=g)
            images = wild.images[idx.numpy()]
            captions = [wild.captions[int(i)] for i in idx]
        else:
            idx = torch.randint(0, len(faces), (config.batch_size,), generator=g)
            images = faces.images[idx.numpy()]
            picks = torch.randint(0, len(NEUTRAL_TEMPLATES), (config.batch_size,), generator=g)
            captions = [NEUTRAL_TEMPLATES[int(i)] for i in picks]
        loss = ldm_loss(model, images, captions, g, cond_drop_prob=config.cond_drop_prob)
        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()
        if step % config.log_every == 0 or step == config.pretrain_steps:
            val = float(loss.detach())
            report.rows.append(
                ReportRow(step, val, 0.0, 0.0, val, config.pretrain_lr,
                          (time.perf_counter() - start) * 1000.0)
            )
    report.duration_s = time.perf_counter() - start

    model.unet.requires_grad_(False)
    model.text_encoder.requires_grad_(False)
    if out_dir is not None:
        from .checkpoint import save_base_model

        save_base_model(model, out_dir / "base.ckpt")
        report.checkpoint_path = out_dir / "base.ckpt"
        report.write_tsv(out_dir / "pretrain-report.tsv")
        try:
            from .plotting import loss_curve

            loss_curve(report, out_dir / "pretrain-loss.png")
        except Exception:
            logger.exception("loss-curve rendering failed")
    return report


def stage1_loss(
    model: BaseModel,
    mapping: MappingNetwork,
    images: np.ndarray,
    wplus: torch.Tensor,
    rng: int | torch.Generator,
    cond_drop_prob: float = 0.0,
    identity_scale: float = 1.0,
) -> torch.Tensor:
    """Denoising MSE on aligned faces with neutral prompts and identity tokens."""
    g = _as_generator(rng)
    size = model.profile.face_size
    if images.shape[1] != size or images.shape[2] != size:
        raise ValidationError(
            f"stage 1 expects {size}x{size} aligned faces, got {images.shape[1]}x{images.shape[2]}"
        )
    dtype = next(model.unet.parameters()).dtype
    z0 = images_to_latents(images, dtype)
    b = z0.shape[0]
    t = torch.randint(0, model.schedule.timesteps, (b,), generator=g)
    eps = torch.randn(z0.shape, generator=g, dtype=dtype)
    z_t = add_noise(z0, t, eps, model.schedule)

    picks = torch.randint(0, len(NEUTRAL_TEMPLATES), (b,), generator=g)
    prompts = [NEUTRAL_TEMPLATES[int(i)] for i in picks]
    text = model.text_encoder.encode_batch(prompts).to(dtype)
    f_w = mapping(wplus.to(dtype))
    text, f_w = drop_conditions(
        text, f_w, cond_drop_prob, g, model.text_encoder.null_condition()
    )
    eps_hat = model.unet(z_t, t, text, f_w, identity_scale)
    return torch.mean((eps - eps_hat) ** 2)


@dataclass
class Stage2Losses:
    rec: torch.Tensor
    disen: torch.Tensor
    reg: torch.Tensor
    total: torch.Tensor


def _masked_mean_sq(diff: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    return torch.mean((mask * diff) ** 2)


def stage2_losses(
    model: BaseModel,
    mapping: MappingNetwork,
    images: np.ndarray,
    masks: torch.Tensor | np.ndarray | None,
    captions: list[str],
    wplus: torch.Tensor,
    weights: LossWeights,
    aug: AugmentationOp,
    rng: int | torch.Generator,
    cond_drop_prob: float = 0.0,
    stop_grad_aux: bool = False,
    identity_scale: float = 1.0,
) -> Stage2Losses:
    """Reconstruction + masked disentanglement and regularization on wild samples.

    All three terms reuse one (z_t, t, eps) draw per sample.  With
    stop_grad_aux the augmented and text-only branches are treated as fixed
    targets instead of carrying gradients.
    """
    if masks is None:
        raise ValidationError("stage 2 requires face masks")
    g = _as_generator(rng)
    dtype = next(model.unet.parameters()).dtype
    z0 = images_to_latents(images, dtype)
    b = z0.shape[0]
    t = torch.randint(0, model.schedule.timesteps, (b,), generator=g)
    eps = torch.randn(z0.shape, generator=g, dtype=dtype)
    z_t = add_noise(z0, t, eps, model.schedule)

    text = model.text_encoder.encode_batch(captions).to(dtype)
    f_w = mapping(wplus.to(dtype))
    text, f_w = drop_conditions(
        text, f_w, cond_drop_prob, g, model.text_encoder.null_condition()
    )
    f_w_aug = apply_augmentation(f_w, aug, g)

    eps_full = model.unet(z_t, t, text, f_w, identity_scale)
    if stop_grad_aux:
        with torch.no_grad():
            eps_aug = model.unet(z_t, t, text, f_w_aug, identity_scale)
            eps_text = model.unet(z_t, t, text, None)
    else:
        eps_aug = model.unet(z_t, t, text, f_w_aug, identity_scale)
        eps_text = model.unet(z_t, t, text, None)

    mask = torch.as_tensor(np.asarray(masks), dtype=dtype)
    m_lat = downsample_mask(mask, model.profile.codec_factor)

    rec = torch.mean((eps - eps_full) ** 2)
    disen = _masked_mean_sq(eps_full - eps_aug, m_lat)
    reg = _masked_mean_sq(eps_full - eps_text, m_lat)
    total = rec + weights.gamma1 * disen + weights.gamma2 * reg
    return Stage2Losses(rec=rec, disen=disen, reg=reg, total=total)


def _freeze_base(model: BaseModel) -> None:
    model.unet.requires_grad_(False)
    model.text_encoder.requires_grad_(False)


def run_stage(
    stage: int,
    config: TrainConfig,
    dataset: Stage1Dataset | Stage2Dataset,
    out_dir: Path | None,
    model: BaseModel,
    mapping: MappingNetwork | None = None,
    adapter: IdentityAdapter | None = None,
) -> tuple[MappingNetwork, IdentityAdapter, TrainReport]:
    """Run one optimization stage; returns the (mapping, adapter) pair and report.

    Stage 1 creates a fresh mapping/adapter when none are given; stage 2
    requires both (they come from the stage-1 checkpoint).
    """
    from .adapter import attach, detach  # local import to avoid cycle at module load

    if stage not in (1, 2):
        raise ConfigurationError(f"stage must be 1 or 2, got {stage}")
    if stage == 2 and (mapping is None or adapter is None):
        raise ConfigurationError("stage 2 requires a stage-1 checkpoint (mapping + adapter)")
    if stage == 1 and not isinstance(dataset, Stage1Dataset):
        raise ValidationError("stage 1 expects a Stage1Dataset")
    if stage == 2 and not isinstance(dataset, Stage2Dataset):
        raise ValidationError("stage 2 expects a Stage2Dataset")

    _freeze_base(model)
    if mapping is None:
        mapping = build_mapping_network(model.profile, seed=0x3A9 + config.seed)
    if adapter is None:
        adapter = init_adapter(model.unet)

    was_attached = model.unet.adapter_attached
    if was_attached:
        detach(model.unet)
    attach(model.unet, adapter)

    mapping.requires_grad_(stage == 1)
    adapter.requires_grad_(True)
    trainable = list(adapter.parameters()) + (list(mapping.parameters()) if stage == 1 else [])
    opt = torch.optim.AdamW(trainable, lr=config.lr, weight_decay=config.weight_decay)

    g = torch.Generator()
    g.manual_seed(config.seed * 1_000_003 + stage)
    steps = config.stage1_steps if stage == 1 else config.stage2_steps
    weights = LossWeights(config.gamma1, config.gamma2)
    aug = AugmentationOp(config.aug_mode, config.aug_sigma)
    wplus_all = torch.from_numpy(np.stack([w.vectors for w in dataset.wplus]))

    report = TrainReport(stage=stage)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    start = time.perf_counter()
    for step in range(1, steps + 1):
        idx = torch.randint(0, len(dataset), (config.batch_size,), generator=g)
        images = dataset.images[idx.numpy()]
        wp = wplus_all[idx]
        if stage == 1:
            loss = stage1_loss(
                model, mapping, images, wp, g, cond_drop_prob=config.cond_drop_prob
            )
            val = float(loss.detach())
            parts = (val, 0.0, 0.0, val)
        else:
            masks = dataset.masks[idx.numpy()]
            caps = [dataset.captions[int(i)] for i in idx]
            losses = stage2_losses(
                model, mapping, images, masks, caps, wp, weights, aug, g,
                cond_drop_prob=config.cond_drop_prob, stop_grad_aux=config.stop_grad_aux,
            )
            loss = losses.total
            parts = (
                float(losses.rec.detach()),
                float(losses.disen.detach()),
                float(losses.reg.detach()),
                float(losses.total.detach()),
            )

        opt.zero_grad(set_to_none=True)
        loss.backward()
        opt.step()

        if step % config.log_every == 0 or step == steps:
            report.rows.append(
                ReportRow(
                    step=step,
                    rec=parts[0],
                    disen=parts[1],
                    reg=parts[2],
                    total=parts[3],
                    lr=config.lr,
                    wallclock_ms=(time.perf_counter() - start) * 1000.0,
                )
            )
        if (
            out_dir is not None
            and config.checkpoint_every
            and step % config.checkpoint_every == 0
            and step != steps
        ):
            save_adapter(mapping, adapter, out_dir / f"stage{stage}-step{step}.ckpt", model.profile)

    report.duration_s = time.perf_counter() - start
    detach(model.unet)

    if out_dir is not None:
        ckpt = out_dir / f"stage{stage}-step{steps}.ckpt"
        save_adapter(mapping, adapter, ckpt, model.profile)
        report.checkpoint_path = ckpt
        report.write_tsv(out_dir / f"stage{stage}-report.tsv")
        try:
            from .plotting import loss_curve

            loss_curve(report, out_dir / f"stage{stage}-loss.png")
        except Exception:  # plotting must never fail a training run
            logger.exception("loss-curve rendering failed")
    return mapping, adapter, report
