"""Command-line entry point: ``lidardiff {project,schedules,train,sample,backproject,eval}``.

Exit codes: 0 success, 2 usage/config/data error, 3 numerical failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from .config import RunConfig
from .errors import LidarDiffError, NumericalError
from .projection import EQUIRECT, RangeImage

log = logging.getLogger("lidardiff")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 2, 3


class CommandError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _threads():
    n = os.environ.get("LPCI_THREADS")
    if n:
        import torch
        torch.set_num_threads(max(1, int(n)))


def _resolve_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if getattr(args, "config", None) else RunConfig()
    return cfg.with_overrides(getattr(args, "set", None))


def _write_config(path: Path, cfg: RunConfig):
    path.write_text(cfg.to_json())


def save_png16(path, data01):
    from PIL import Image
    arr = np.round(np.clip(np.asarray(data01, dtype=np.float64), 0, 1) * 65535).astype(np.uint16)
    Image.fromarray(arr).save(path)


def _image_files(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise CommandError(f"{d}: not a directory")
    files = sorted(d.glob("*.lpci"))
    if not files:
        raise CommandError(f"{d}: no .lpci images found")
    return files


def _load_images(files):
    from . import lpci
    out = []
    for f in files:
        data, _ = lpci.load(f)
        out.append(np.asarray(data, dtype=np.float32).reshape(data.shape[-2:]))
    shapes = {a.shape for a in out}
    if len(shapes) != 1:
        raise CommandError(f"images have differing shapes: {sorted(shapes)}")
    return np.stack(out)[:, None]


def split_names(files):
    """Deterministic 80/10/10 train/val/test partition of sorted names."""
    files = sorted(files)
    n = len(files)
    n_val = n_test = n // 10
    n_train = n - n_val - n_test
    return files[:n_train], files[n_train:n_train + n_val], files[n_train + n_val:]


# --- commands -------------------------------------------------------------------

def cmd_project(args) -> int:
    from .pointcloud import knn_density, load_scan, smooth_depths
    from .projection import project_bev, project_equirect

    cfg = _resolve_config(args)
    views = [v.strip() for v in args.views.split(",") if v.strip()]
    bad = [v for v in views if v not in ("equirect", "bev")]
    if bad:
        raise CommandError(f"unknown view(s): {', '.join(bad)}")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_config(out / "run_config.json", cfg)
    smooth = cfg.smoothing.enabled or args.smooth
    failures = 0
    for scan in args.scans:
        try:
            cloud = load_scan(scan)
            if smooth:
                dens = knn_density(cloud, cfg.smoothing.k)
                cloud = smooth_depths(cloud, dens, cfg.smoothing.sigma_scale, cfg.smoothing.radius_scale)
            for view in views:
                meta = cfg.projection.meta(view)
                img = project_equirect(cloud, meta) if view == "equirect" else project_bev(cloud, meta)
                target = out / f"{Path(scan).stem}_{view}.lpci"
                img.save(target)
                if args.png:
                    save_png16(target.with_suffix(".png"), img.data)
                log.info("wrote %s", target)
        except (LidarDiffError, OSError) as exc:
            failures += 1
            log.error("%s: %s", scan, exc)
    return EXIT_USAGE if failures else EXIT_OK


def cmd_schedules(args) -> int:
    from .schedule import KINDS, extras_for, make_schedule

    cfg = _resolve_config(args)
    sec = cfg.schedule
    if args.steps is not None:
        sec.steps = args.steps
    if args.beta_start is not None:
        sec.beta_start = args.beta_start
    if args.beta_end is not None:
        sec.beta_end = args.beta_end
    kinds = list(KINDS) if args.kinds == "all" else [k.strip() for k in args.kinds.split(",") if k.strip()]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for kind in kinds:
        sched = make_schedule(kind, sec.steps, sec.beta_start, sec.beta_end,
                              **extras_for(kind, sec.extras))
        target = out / f"{sched.kind}.csv"
        sched.write_csv(target)
        log.info("wrote %s", target)
    _write_config(out / "run_config.json", cfg)
    return EXIT_OK


def _diffusion_config(cfg: RunConfig, sample_steps=None, seed=None):
    from .diffusion import DiffusionConfig
    return DiffusionConfig(cfg.schedule.build(), sample_steps, cfg.embedding.spec(),
                           cfg.seed if seed is None else seed)


def cmd_train(args) -> int:
    from .denoiser import build_reference_unet, load_checkpoint, save_checkpoint
    from .diffusion import train_loop

    cfg = _resolve_config(args)
    if args.epochs is not None:
        cfg.training.epochs = args.epochs
    files = _image_files(args.data)
    train_f, val_f, test_f = split_names(files)
    log.info("split %d/%d/%d train/val/test", len(train_f), len(val_f), len(test_f))
    train = _load_images(train_f)
    val = _load_images(val_f) if val_f else None
    dcfg = _diffusion_config(cfg)
    opt_state = None
    if args.resume:
        model, opt_state, attrs = load_checkpoint(args.resume)
        _check_compatible(attrs.get("run_config", {}), cfg)
    else:
        model = build_reference_unet(cfg.denoiser.unet_config(cfg.embedding.d), seed=cfg.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    result = train_loop(model, train, dcfg, cfg.training.epochs, cfg.training.batch_size,
                        val, cfg.training.patience, cfg.training.optimizer(), opt_state,
                        cfg.training.max_steps)
    if result.best_state is not None:
        model.load_state_dict(result.best_state)
    save_checkpoint(out, model, result.optimizer_state, {
        "run_config": cfg.to_dict(),
        "image_shape": list(train.shape[1:]),
        "split": {"train": [f.name for f in train_f], "val": [f.name for f in val_f],
                  "test": [f.name for f in test_f]},
        "best_val": None if not np.isfinite(result.best_val) else result.best_val,
    })
    with open(out.with_suffix(".losses.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for epoch, tl, vl in result.history:
            w.writerow([epoch, repr(tl), "" if vl is None else repr(vl)])
    _write_config(out.with_suffix(".config.json"), cfg)
    log.info("saved checkpoint %s after %d epochs (optimizer step %d)",
             out, len(result.history), result.optimizer_state.step)
    return EXIT_OK


def _model_sections(d: dict) -> dict:
    return {k: d.get(k) for k in ("schedule", "embedding", "denoiser")}


def _check_compatible(ckpt_cfg: dict, cfg: RunConfig):
    want, have = _model_sections(cfg.to_dict()), _model_sections(ckpt_cfg)
    diff = []
    for section in want:
        a, b = have.get(section) or {}, want[section] or {}
        for key in sorted(set(a) | set(b)):
            if a.get(key) != b.get(key):
                diff.append(f"  {section}.{key}: checkpoint={a.get(key)!r} config={b.get(key)!r}")
    if diff:
        raise CommandError("checkpoint and config disagree:\n" + "\n".join(diff))


def cmd_sample(args) -> int:
    import torch

    from .denoiser import load_checkpoint
    from .diffusion import sample

    if args.count < 1:
        raise CommandError("--count must be at least 1")
    model, _, attrs = load_checkpoint(args.checkpoint)
    ckpt_cfg = RunConfig.from_dict(attrs.get("run_config", {}))
    if args.config or args.set:
        cfg = _resolve_config(args)
        _check_compatible(ckpt_cfg.to_dict(), cfg)
    else:
        cfg = ckpt_cfg
    seed = cfg.seed if args.seed is None else args.seed
    steps = args.sample_steps or cfg.sampling.steps or cfg.schedule.steps
    if steps > cfg.schedule.steps:
        raise CommandError(f"--sample-steps {steps} exceeds the trained {cfg.schedule.steps} steps")
    dcfg = _diffusion_config(cfg, steps, seed)
    shape = tuple(attrs.get("image_shape", [cfg.denoiser.in_channels] + list(cfg.projection.equirect_resolution)))
    meta = cfg.projection.meta("equirect")
    from .projection import ProjectionMeta
    meta = ProjectionMeta(meta.d_max, meta.theta_min, meta.theta_max, meta.bev_extent, shape[-2:])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log.info("sampling %d images with %d steps (trained on %d)", args.count, steps, cfg.schedule.steps)
    gen = torch.Generator().manual_seed(seed)
    written = 0
    bs = max(1, cfg.sampling.batch_size)
    while written < args.count:
        n = min(bs, args.count - written)
        t0 = time.perf_counter()
        imgs = sample(model, dcfg, (n,) + shape, generator=gen).numpy()
        per = (time.perf_counter() - t0) / n
        for img in imgs:
            target = out / f"sample_{written:04d}.lpci"
            RangeImage(img.reshape(shape[-2:]), EQUIRECT, meta).save(target)
            if args.png:
                save_png16(target.with_suffix(".png"), img.reshape(shape[-2:]))
            written += 1
        log.info("%d steps: %.3f s per sample", steps, per)
    _write_config(out / "run_config.json", cfg)
    return EXIT_OK


def cmd_backproject(args) -> int:
    from .pointcloud import save_scan
    from .projection import backproject_equirect

    img = RangeImage.load(args.input)
    if img.kind != EQUIRECT:
        raise CommandError(f"{args.input}: expected an equirect image, got {img.kind}")
    cloud = backproject_equirect(img)
    if len(cloud) == 0:
        log.warning("%s has no returns; writing an empty point file", args.input)
    save_scan(cloud, args.out)
    log.info("wrote %d points to %s", len(cloud), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    from .metrics import evaluate

    cfg = _resolve_config(args)
    gen = _load_images(_image_files(args.generated))[:, 0]
    ref = _load_images(_image_files(args.reference))[:, 0]
    report = evaluate(gen, ref, cfg=cfg.metrics.metric_config())
    doc = json.loads(report.to_json())
    doc["config"] = {"metrics": doc["config"], "run": cfg.to_dict()}
    Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True))
    log.info("jsd %.5f mmd %.5f frechet %.5f", report.jsd, report.mmd, report.frechet)
    return EXIT_OK


# --- argument parsing -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lidardiff", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="RunConfig JSON file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                       help="override a config value, e.g. schedule.kind=ramp")

    p = sub.add_parser("project", help="project scans to equirect/BEV images")
    p.add_argument("scans", nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--views", default="equirect")
    p.add_argument("--smooth", action="store_true", help="apply kNN-adaptive depth smoothing")
    p.add_argument("--png", action="store_true")
    common(p)
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("schedules", help="write noise-schedule tables as CSV")
    p.add_argument("--kinds", default="all")
    p.add_argument("--steps", type=int)
    p.add_argument("--beta-start", type=float)
    p.add_argument("--beta-end", type=float)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_schedules)

    p = sub.add_parser("train", help="train the reference denoiser on a directory of images")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", help="generate images from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int)
    p.add_argument("--sample-steps", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--png", action="store_true")
    common(p)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("backproject", help="lift an equirect image back to 3D points")
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_backproject)

    p = sub.add_parser("eval", help="compare generated images against references")
    p.add_argument("--generated", required=True)
    p.add_argument("--reference", required=True)
    p.add_argument("--out", required=True)
    common(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    _threads()
    try:
        return args.func(args)
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERIC
    except CommandError as exc:
        log.error("%s", exc)
        return exc.code
    except (LidarDiffError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
