"""Command-line surface: data synthesis, training, sampling, editing, eval, grids.

Every command echoes its effective configuration into its run directory and
writes all outputs there; inputs are never modified.  Figures (loss curves,
comparison grids, eval summaries) are rendered next to the delimited outputs.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np
import torch

from . import profiles
from .adapter import attach, map_wplus
from .checkpoint import load_adapter, load_base_model, save_base_model
from .config import OUT_ROOT_ENV, RunConfig, load_config
from .errors import WAdapterError
from .evaluation import eval_prompts, run_eval
from .model import BaseModel, build_base_model
from .plotting import eval_summary_figure, image_grid
from .sampler import (
    SamplerConfig,
    config_sidecar,
    ddim_sample,
    interpolate_wplus,
    sample_with_edit,
    write_sample,
)
from .toyworld.data import load_png, load_stage1, load_stage2, make_stage1, make_stage2
from .toyworld.factors import edit_direction, sample_wplus
from .training import TrainConfig, run_pretrain, run_stage


def _run_dir(args, command: str) -> Path:
    if args.out:
        d = Path(args.out)
    else:
        root = Path(os.environ.get(OUT_ROOT_ENV, "runs"))
        d = root / f"{command}-{time.strftime('%Y%m%d-%H%M%S')}-{os.getpid()}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def _sampler_config(cfg: RunConfig, args) -> SamplerConfig:
    return SamplerConfig(
        steps=cfg.sampler_steps,
        guidance_scale=cfg.guidance_scale,
        identity_scale=args.identity_scale if args.identity_scale is not None else cfg.identity_scale,
        seed=args.seed if args.seed is not None else cfg.seed,
        image_size=cfg.image_size,
    )


def _load_model_and_adapter(checkpoint: str) -> tuple[BaseModel, "object", "object"]:
    ckpt = Path(checkpoint)
    if not ckpt.is_file():
        raise WAdapterError(f"missing adapter checkpoint: {ckpt}")
    base_path = ckpt.parent / "base.ckpt"
    if not base_path.is_file():
        raise WAdapterError(f"missing base model checkpoint next to adapter: {base_path}")
    model = load_base_model(base_path)
    mapping, adapter = load_adapter(ckpt, model)
    attach(model.unet, adapter)
    return model, mapping, adapter


def cmd_make_data(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = _run_dir(args, "data")
    cfg.write_echo(out)
    profile = profiles.get_profile(cfg.profile)
    make_stage1(out, cfg.n_stage1, profile, seed=cfg.seed)
    make_stage2(out, cfg.n_stage2, profile, seed=cfg.seed)
    print(f"wrote stage1 ({cfg.n_stage1}) and stage2 ({cfg.n_stage2}) datasets under {out}")
    return 0


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        batch_size=cfg.batch_size,
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        cond_drop_prob=cfg.cond_drop_prob,
        pretrain_steps=cfg.pretrain_steps,
        pretrain_lr=cfg.pretrain_lr,
        stage1_steps=cfg.stage1_steps,
        stage2_steps=cfg.stage2_steps,
        gamma1=cfg.gamma1,
        gamma2=cfg.gamma2,
        aug_mode=cfg.aug_mode,
        aug_sigma=cfg.aug_sigma,
        seed=cfg.seed,
        log_every=cfg.log_every,
        checkpoint_every=cfg.checkpoint_every,
    )


def cmd_pretrain(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = _run_dir(args, "pretrain")
    cfg.write_echo(out)
    profile = profiles.get_profile(cfg.profile)
    data_root = Path(args.data)
    if not data_root.exists():
        raise WAdapterError(f"missing dataset directory: {data_root}")
    model = build_base_model(profile, seed=cfg.seed)
    report = run_pretrain(
        _train_config(cfg), load_stage1(data_root), load_stage2(data_root), out, model
    )
    print(
        f"pretraining done in {report.duration_s:.1f}s; final loss "
        f"{report.rows[-1].total:.4f}; base checkpoint {report.checkpoint_path}"
    )
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    out = _run_dir(args, f"train-stage{args.stage}")
    cfg.write_echo(out)

    data_root = Path(args.data)
    if not data_root.exists():
        raise WAdapterError(f"missing dataset directory: {data_root}")

    mapping = adapter = None
    if args.stage == 1:
        if not args.base:
            raise WAdapterError("stage 1 requires --base pointing at a pretrained base checkpoint")
        base_path = Path(args.base)
        if not base_path.is_file():
            raise WAdapterError(f"missing base checkpoint: {base_path}")
        model = load_base_model(base_path)
    else:
        if not args.init_from:
            raise WAdapterError("stage 2 requires --init-from pointing at a stage-1 checkpoint")
        init = Path(args.init_from)
        if not init.is_file():
            raise WAdapterError(f"missing stage-1 checkpoint: {init}")
        base_path = init.parent / "base.ckpt"
        if not base_path.is_file():
            raise WAdapterError(f"missing base checkpoint next to stage-1 checkpoint: {base_path}")
        model = load_base_model(base_path)
        mapping, adapter = load_adapter(init, model)

    dataset = load_stage1(data_root) if args.stage == 1 else load_stage2(data_root)
    save_base_model(model, out / "base.ckpt")
    _, _, report = run_stage(args.stage, _train_config(cfg), dataset, out, model, mapping, adapter)
    print(
        f"stage {args.stage} done in {report.duration_s:.1f}s; "
        f"final loss {report.rows[-1].total:.4f}; checkpoint {report.checkpoint_path}"
    )
    return 0


def cmd_sample(args) -> int:
    cfg = load_config(args.config)
    out = _run_dir(args, "sample")
    cfg.write_echo(out)
    model, mapping, _ = _load_model_and_adapter(args.checkpoint)
    sc = _sampler_config(cfg, args)
    w = sample_wplus(args.identity_seed, model.profile)
    tokens = map_wplus(mapping, w)
    image = ddim_sample(model, args.prompt, tokens, sc)
    write_sample(
        out / "sample.png",
        image,
        config_sidecar(sc, prompt=args.prompt, identity_seed=args.identity_seed),
    )
    print(f"wrote {out / 'sample.png'}")
    return 0


def _parse_floats(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip() != ""]


def cmd_edit(args) -> int:
    cfg = load_config(args.config)
    out = _run_dir(args, "edit")
    cfg.write_echo(out)
    model, mapping, _ = _load_model_and_adapter(args.checkpoint)
    sc = _sampler_config(cfg, args)
    w = sample_wplus(args.identity_seed, model.profile)
    direction = edit_direction(args.attribute, model.profile)
    alphas = _parse_floats(args.alpha)
    images = []
    for alpha in alphas:
        img = sample_with_edit(model, mapping, args.prompt, w, direction, alpha, sc)
        name = f"edit-alpha{alpha:+g}.png"
        write_sample(
            out / name,
            img,
            config_sidecar(
                sc,
                prompt=args.prompt,
                identity_seed=args.identity_seed,
                attribute=args.attribute,
                alpha=alpha,
            ),
        )
        images.append(img)
    image_grid(
        [images],
        out / "edit-grid.png",
        col_labels=[f"alpha={a:+g}" for a in alphas],
        title=f"{args.attribute} edit sweep",
    )
    print(f"wrote {len(alphas)} edited samples and edit-grid.png under {out}")
    return 0


def cmd_interpolate(args) -> int:
    cfg = load_config(args.config)
    out = _run_dir(args, "interpolate")
    cfg.write_echo(out)
    model, mapping, _ = _load_model_and_adapter(args.checkpoint)
    sc = _sampler_config(cfg, args)
    w1 = sample_wplus(args.identity_a, model.profile)
    w2 = sample_wplus(args.identity_b, model.profile)
    kappas = _parse_floats(args.kappa)
    images = []
    for kappa in kappas:
        tokens = map_wplus(mapping, interpolate_wplus(w1, w2, kappa))
        img = ddim_sample(model, args.prompt, tokens, sc)
        name = f"interp-kappa{kappa:g}.png"
        write_sample(
            out / name,
            img,
            config_sidecar(
                sc,
                prompt=args.prompt,
                identity_a=args.identity_a,
                identity_b=args.identity_b,
                kappa=kappa,
            ),
        )
        images.append(img)
    image_grid(
        [images],
        out / "interp-grid.png",
        col_labels=[f"kappa={k:g}" for k in kappas],
        title="w+ interpolation",
    )
    print(f"wrote {len(kappas)} interpolated samples and interp-grid.png under {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = load_config(args.config)
    out = _run_dir(args, "eval")
    cfg.write_echo(out)
    model, mapping, _ = _load_model_and_adapter(args.checkpoint)
    sc = _sampler_config(cfg, args)
    seeds = list(range(cfg.eval_identities))
    prompts = eval_prompts(cfg.eval_prompts)
    ckpt_name = Path(args.checkpoint).stem
    report_path = out / f"eval-{ckpt_name}-{sc.seed}.tsv"
    report = run_eval(model, mapping, seeds, prompts, sc, out_path=report_path)
    eval_summary_figure(report, out / f"eval-{ckpt_name}-{sc.seed}.png")
    print(
        f"id_distance={report.id_distance:.4f} prompt_consistency={report.prompt_consistency:.4f} "
        f"detection_rate={report.detection_rate:.4f} background_change={report.background_change:.4f}"
    )
    print(f"wrote {report_path}")
    return 0


def cmd_grid(args) -> int:
    out = _run_dir(args, "grid")
    paths = [Path(p) for p in args.inputs]
    missing = [str(p) for p in paths if not p.is_file()]
    if missing:
        raise WAdapterError(f"missing grid input images: {', '.join(missing)}")
    images = [load_png(p) for p in paths]
    cols = args.cols or len(images)
    rows = [images[i : i + cols] for i in range(0, len(images), cols)]
    labels = args.labels.split(",") if args.labels else None
    image_grid(rows, out / "grid.png", col_labels=labels, title=args.title)
    print(f"wrote {out / 'grid.png'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="wadapter", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, checkpoint: bool = False):
        sp.add_argument("--config", default=None, help="flat key = value config file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--out", default=None, help="run directory (default: fresh under $WADAPTER_OUT)")
        if checkpoint:
            sp.add_argument("--checkpoint", required=True, help="adapter checkpoint path")
            sp.add_argument(
                "--lambda", dest="identity_scale", type=float, default=None,
                help="identity condition scale at inference",
            )

    sp = sub.add_parser("make-data", help="synthesize stage-1 and stage-2 datasets")
    common(sp)
    sp.set_defaults(fn=cmd_make_data)

    sp = sub.add_parser("pretrain", help="train the base text-to-image model")
    common(sp)
    sp.add_argument("--data", required=True, help="dataset root from make-data")
    sp.set_defaults(fn=cmd_pretrain)

    sp = sub.add_parser("train", help="run one adapter training stage")
    common(sp)
    sp.add_argument("--stage", type=int, choices=(1, 2), required=True)
    sp.add_argument("--data", required=True, help="dataset root from make-data")
    sp.add_argument("--base", default=None, help="pretrained base checkpoint (required for stage 1)")
    sp.add_argument("--init-from", default=None, help="stage-1 checkpoint (required for stage 2)")
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("sample", help="sample one identity-conditioned image")
    common(sp, checkpoint=True)
    sp.add_argument("--prompt", required=True)
    sp.add_argument("--identity-seed", type=int, default=0)
    sp.set_defaults(fn=cmd_sample)

    sp = sub.add_parser("edit", help="attribute-edit sweep over alpha")
    common(sp, checkpoint=True)
    sp.add_argument("--prompt", required=True)
    sp.add_argument("--identity-seed", type=int, default=0)
    sp.add_argument("--attribute", choices=("smile", "age"), default="smile")
    sp.add_argument("--alpha", default="-3,-1,0,1,3", help="comma-separated alpha values")
    sp.set_defaults(fn=cmd_edit)

    sp = sub.add_parser("interpolate", help="interpolate between two identities")
    common(sp, checkpoint=True)
    sp.add_argument("--prompt", required=True)
    sp.add_argument("--identity-a", type=int, default=0)
    sp.add_argument("--identity-b", type=int, default=1)
    sp.add_argument("--kappa", default="0,0.25,0.5,0.75,1", help="comma-separated kappa values")
    sp.set_defaults(fn=cmd_interpolate)

    sp = sub.add_parser("eval", help="run the identity x prompt evaluation grid")
    common(sp, checkpoint=True)
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("grid", help="tile images into a labeled comparison grid")
    sp.add_argument("--inputs", nargs="+", required=True)
    sp.add_argument("--cols", type=int, default=None)
    sp.add_argument("--labels", default=None, help="comma-separated column labels")
    sp.add_argument("--title", default=None)
    sp.add_argument("--out", default=None)
    sp.set_defaults(fn=cmd_grid)

    return p


def main(argv: list[str] | None = None) -> int:
    torch.set_num_threads(max(1, os.cpu_count() or 1))
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except WAdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except FileNotFoundError as exc:
        print(f"error: missing file: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
