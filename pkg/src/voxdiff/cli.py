"""Command-line front end.

Every command is deterministic given its seed, writes outputs atomically and
exits with 2 (I/O), 3 (config), 4 (solver) or 5 (numeric) on failure.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__, kernels
from .codec import load_latent
from .condition import load_condition
from .denoiser import train_affine_denoiser
from .errors import ConfigError, NumericError, VoxdiffError
from .evalkit import REFERENCE_TABLES, MaskSpec, aggregate_report, generate_masks, masked_metrics
from .pipeline import RunConfig, config_hash, inpaint_volume, subject_seed, synthesize_volume
from .postprocess import BlendConfig, PostprocessConfig, harmonize
from .schedule import linear_beta_schedule, repaint_plan, subsample_schedule
from .volume import MaskVolume, atomic_write_bytes, read_mask, read_volume, write_mask, write_volume

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger("voxdiff")


# ------------------------------------------------------------------ helpers


def sha256_file(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    path = Path(path)
    h.update(path.read_bytes())
    sidecar = path.with_name(path.name + ".meta.json")
    if sidecar.exists():
        h.update(sidecar.read_bytes())
    return h.hexdigest()


def load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        if p.suffix == ".toml":
            return tomllib.loads(p.read_text())
        return json.loads(p.read_text())
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{p}: cannot parse config ({exc})") from exc


def _set(d: dict, section: str | None, key: str, value: Any) -> None:
    if value is None:
        return
    target = d if section is None else d.setdefault(section, {})
    target[key] = value


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Config file values overridden by any explicitly given flag."""
    d = load_config_file(getattr(args, "config", None))
    _set(d, None, "seed", args.seed)
    _set(d, None, "codec", getattr(args, "codec", None))
    _set(d, None, "mode", getattr(args, "mode", None))
    _set(d, "schedule", "T", args.T)
    _set(d, "schedule", "beta_start", args.beta_start)
    _set(d, "schedule", "beta_end", args.beta_end)
    _set(d, "sampler", "eta", args.eta)
    _set(d, "sampler", "T_sample", args.T_sample)
    _set(d, "sampler", "jump_length", args.jump_length)
    _set(d, "sampler", "n_resample", args.n_resample)
    _set(d, "sampler", "dilate_unknown", args.dilate_unknown)
    if d.get("seed") is not None:
        d.setdefault("sampler", {})["seed"] = d["seed"]
    if hasattr(args, "blend"):
        _add_post_overrides(d, args)
    return RunConfig.from_dict(d)


def _add_post_overrides(d: dict, args: argparse.Namespace) -> None:
    _set(d, "postprocess", "enabled", getattr(args, "postprocess_enabled", None))
    _set(d, "postprocess", "blend", args.blend)
    _set(d, "postprocess", "match", args.match)
    _set(d, "postprocess", "order", args.order)
    _set(d, "postprocess", "black_threshold", args.black_threshold)
    _set(d, "postprocess", "bins", args.bins)
    _set(d, "postprocess", "cg_tolerance", args.cg_tolerance)
    _set(d, "postprocess", "cg_max_iters", args.cg_max_iters)
    if getattr(args, "exact_quantiles", False):
        d["postprocess"]["bins"] = None


def write_manifest(path: Path, payload: dict) -> None:
    atomic_write_bytes(path, json.dumps(payload, indent=2, sort_keys=True).encode())


def thread_cap() -> int:
    try:
        return max(1, int(os.environ.get("VOXDIFF_THREADS", "1")))
    except ValueError as exc:
        raise ConfigError("VOXDIFF_THREADS must be an integer") from exc


def _manifest_path(out: Path) -> Path:
    return out.with_name(out.name + ".manifest.json")


# ------------------------------------------------------------------ commands


def _inpaint_one(
    args: argparse.Namespace, cfg: RunConfig, image: str, mask: str, out: Path,
    condition: str | None, tissue: str | None, concentration: str | None, seed: int,
) -> dict:
    t0 = time.perf_counter()
    img = read_volume(image)
    msk = read_mask(mask)
    unknown = msk.invert() if args.mask_convention == "known" else msk
    cond = load_condition(condition) if condition else None
    tis = read_volume(tissue) if tissue else None
    conc = read_volume(concentration) if concentration else None
    res = inpaint_volume(img, unknown, args.denoiser, cfg, cond, tis, conc, seed=seed)
    write_volume(res.volume, out)
    inputs = {"image": image, "mask": mask, "denoiser": args.denoiser}
    for name, p in (("condition", condition), ("tissue", tissue), ("concentration", concentration)):
        if p:
            inputs[name] = p
    manifest = {
        "command": "inpaint",
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "seed": seed,
        "inputs": {k: {"path": str(v), "sha256": sha256_file(v)} for k, v in inputs.items()},
        "output": str(out),
        "output_sha256": sha256_file(out),
        "plan_length": res.plan_length,
        "kernel_backend": kernels.BACKEND,
        "wall_time_s": round(time.perf_counter() - t0, 3),
    }
    write_manifest(_manifest_path(out), manifest)
    return manifest


def cmd_inpaint(args: argparse.Namespace) -> int:
    cfg = resolve_run_config(args)
    if args.batch:
        return _inpaint_batch(args, cfg)
    if not (args.image and args.mask and args.out):
        raise ConfigError("inpaint needs --image, --mask and --out (or --batch)")
    manifest = _inpaint_one(
        args, cfg, args.image, args.mask, Path(args.out),
        args.condition, args.tissue, args.concentration, cfg.seed,
    )
    log.info("wrote %s (plan length %d, %.2fs)", args.out, manifest["plan_length"], manifest["wall_time_s"])
    return 0


def _inpaint_batch(args: argparse.Namespace, cfg: RunConfig) -> int:
    batch_path = Path(args.batch)
    if not batch_path.exists():
        raise FileNotFoundError(f"batch manifest not found: {batch_path}")
    subjects = json.loads(batch_path.read_text())["subjects"]
    out_dir = Path(args.out_dir or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    base = batch_path.parent

    def rel(p):
        return str(base / p) if p else None

    def run(entry: dict) -> dict:
        sid = str(entry["id"])
        return _inpaint_one(
            args, cfg, rel(entry["image"]), rel(entry["mask"]), out_dir / f"{sid}_inpainted.nii",
            rel(entry.get("condition")), rel(entry.get("tissue")), rel(entry.get("concentration")),
            subject_seed(cfg.seed, sid),
        )

    with ThreadPoolExecutor(max_workers=min(thread_cap(), len(subjects))) as pool:
        results = list(pool.map(run, subjects))
    write_manifest(out_dir / "batch.manifest.json", {"subjects": results, "config_hash": config_hash(cfg)})
    return 0


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = resolve_run_config(args)
    cond = load_condition(args.condition) if args.condition else None
    if args.like:
        like = read_volume(args.like)
        shape, spacing = like.shape, like.spacing
    elif args.shape:
        shape, spacing = tuple(args.shape), (1.0, 1.0, 1.0)
    else:
        raise ConfigError("synth needs --shape or --like")
    t0 = time.perf_counter()
    vol, _, plan_len = synthesize_volume(shape, args.denoiser, cfg, cond, spacing)
    if not np.all(np.isfinite(vol.data)):
        raise NumericError("synthesis produced non-finite voxels")
    out = Path(args.out)
    write_volume(vol, out)
    inputs = {"denoiser": args.denoiser}
    if args.condition:
        inputs["condition"] = args.condition
    write_manifest(_manifest_path(out), {
        "command": "synth",
        "version": __version__,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "inputs": {k: {"path": str(v), "sha256": sha256_file(v)} for k, v in inputs.items()},
        "output_sha256": sha256_file(out),
        "plan_length": plan_len,
        "wall_time_s": round(time.perf_counter() - t0, 3),
    })
    return 0


def cmd_train_denoiser(args: argparse.Namespace) -> int:
    cfg = resolve_run_config(args)
    manifest = Path(args.manifest)
    if not manifest.exists():
        raise FileNotFoundError(f"training manifest not found: {manifest}")
    pairs = json.loads(manifest.read_text())["pairs"]
    dataset = []
    for pair in pairs:
        z = load_latent(manifest.parent / pair["latent"])
        c = load_condition(manifest.parent / pair["condition"]) if pair.get("condition") else None
        dataset.append((z.data, c))
    model = train_affine_denoiser(
        dataset, cfg.schedule.build(), args.steps, args.lr, cfg.seed, batch_size=args.batch_size
    )
    out = Path(args.out)
    model.save(out)
    tail = max(1, args.steps // 10)
    write_manifest(_manifest_path(out), {
        "command": "train-denoiser",
        "config": cfg.to_dict(),
        "steps": args.steps,
        "lr": args.lr,
        "batch_size": args.batch_size,
        "inputs": {"manifest": {"path": str(manifest), "sha256": sha256_file(manifest)}},
        "final_loss": float(np.mean(model.loss_history[-tail:])) if model.loss_history else None,
        "zero_predictor_loss": float(np.mean(model.zero_loss_history[-tail:])) if model.loss_history else None,
    })
    return 0


def cmd_postprocess(args: argparse.Namespace) -> int:
    generated = read_volume(args.generated)
    known = read_volume(args.known)
    region = read_mask(args.region)
    max_iters = args.cg_max_iters or None
    cfg = PostprocessConfig(
        blend=args.blend is not False,
        match=args.match is not False,
        order=args.order or "he-first",
        black_threshold=args.black_threshold if args.black_threshold is not None else 0.0,
        bins=None if args.exact_quantiles else (args.bins or 256),
        blend_cfg=BlendConfig(args.cg_tolerance or 1e-6, max_iters),
    )
    out = harmonize(generated, known, region, cfg)
    write_volume(out, args.out)
    return 0


def _entries_for(sid, pred, gt, healthy, tumor, window):
    rows = [masked_metrics(pred, gt, healthy, sid, window, "healthy")]
    if tumor is not None:
        rows.append(masked_metrics(pred, gt, tumor, sid, window, "tumor"))
        pooled = MaskVolume(healthy.data | tumor.data)
        rows.append(masked_metrics(pred, gt, pooled, sid, window, "pooled"))
    return rows


def cmd_evaluate(args: argparse.Namespace) -> int:
    entries = []
    if args.batch:
        batch = Path(args.batch)
        if not batch.exists():
            raise FileNotFoundError(f"batch manifest not found: {batch}")
        for s in json.loads(batch.read_text())["subjects"]:
            tumor = read_mask(batch.parent / s["tumor_mask"]) if s.get("tumor_mask") else None
            entries += _entries_for(
                str(s["id"]), read_volume(batch.parent / s["pred"]), read_volume(batch.parent / s["gt"]),
                read_mask(batch.parent / s["healthy_mask"]), tumor, args.ssim_window,
            )
    else:
        if not (args.pred and args.gt and args.region):
            raise ConfigError("evaluate needs --pred, --gt and --region (or --batch)")
        tumor = read_mask(args.tumor_region) if args.tumor_region else None
        entries += _entries_for(
            args.subject, read_volume(args.pred), read_volume(args.gt), read_mask(args.region),
            tumor, args.ssim_window,
        )
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ddof = 1 if args.sample_std else 0
    regions = sorted({e.region for e in entries})
    csv_parts, json_parts = [], {}
    for region in regions:
        report = aggregate_report([e for e in entries if e.region == region], ddof)
        csv_parts.append(report.to_csv() if not csv_parts else report.to_csv().split("\n", 1)[1])
        json_parts[region] = json.loads(report.to_json(args.reference_table))
    atomic_write_bytes(out_dir / "metrics.csv", "".join(csv_parts).encode())
    atomic_write_bytes(out_dir / "metrics.json", json.dumps(json_parts, indent=2).encode())
    if args.reference_table:
        ref = REFERENCE_TABLES[args.reference_table]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric", "mean", "median", "std"])
        for m, vals in ref.items():
            w.writerow([m, *vals])
        atomic_write_bytes(out_dir / f"reference_{args.reference_table}.csv", buf.getvalue().encode())
    sys.stdout.write("".join(csv_parts))
    return 0


def cmd_maskgen(args: argparse.Namespace) -> int:
    gt = read_volume(args.gt)
    seg = read_mask(args.tumor_seg)
    spec = MaskSpec("random_healthy", tuple(args.semi_axes), args.seed, args.tumor_dilation, args.max_attempts)
    tumor, healthy = generate_masks(gt, seg, spec)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_mask(tumor, out_dir / "tumor_mask.nii")
    write_mask(healthy, out_dir / "healthy_mask.nii")
    write_manifest(out_dir / "maskgen.json", {
        "command": "maskgen",
        "seed": args.seed,
        "semi_axes": list(args.semi_axes),
        "tumor_dilation": args.tumor_dilation,
        "inputs": {
            "gt": {"path": args.gt, "sha256": sha256_file(args.gt)},
            "tumor_seg": {"path": args.tumor_seg, "sha256": sha256_file(args.tumor_seg)},
        },
        "healthy_voxels": healthy.count(),
        "tumor_voxels": tumor.count(),
    })
    return 0


def cmd_schedule_dump(args: argparse.Namespace) -> int:
    T = args.T if args.T is not None else 1000
    bs = args.beta_start if args.beta_start is not None else 1e-4
    be = args.beta_end if args.beta_end is not None else 0.02
    base = linear_beta_schedule(T, bs, be)
    T_sample = args.T_sample if args.T_sample is not None else T
    sched = subsample_schedule(base, T_sample)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "source_t", "beta", "alpha", "alpha_bar"])
    for t in range(1, sched.T + 1):
        w.writerow([t, sched.source_timestep(t), repr(float(sched.beta[t - 1])),
                    repr(float(sched.alpha[t - 1])), repr(float(sched.alpha_bar[t - 1]))])
    schedule_csv = buf.getvalue()
    plan = repaint_plan(T_sample, min(args.jump_length or 10, T_sample), args.n_resample or 1)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step", "t_from", "t_to", "direction"])
    for i, (a, b) in enumerate(plan):
        w.writerow([i, a, b, "down" if b < a else "up"])
    plan_csv = buf.getvalue()
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        atomic_write_bytes(out / "schedule.csv", schedule_csv.encode())
        atomic_write_bytes(out / "plan.csv", plan_csv.encode())
    else:
        sys.stdout.write(schedule_csv)
    return 0


# ------------------------------------------------------------------ parser


def _add_schedule_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("schedule / sampler")
    g.add_argument("--T", type=int, help="training timesteps (default 1000)")
    g.add_argument("--beta-start", type=float)
    g.add_argument("--beta-end", type=float)
    g.add_argument("--T-sample", dest="T_sample", type=int, help="sampling timesteps (default 250)")
    g.add_argument("--jump-length", type=int)
    g.add_argument("--n-resample", type=int)
    g.add_argument("--eta", type=float)
    g.add_argument("--dilate-unknown", dest="dilate_unknown", action="store_const", const=True)
    g.add_argument("--no-dilate-unknown", dest="dilate_unknown", action="store_const", const=False)


def _add_post_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("postprocessing")
    g.add_argument("--blend", dest="blend", action="store_const", const=True)
    g.add_argument("--no-blend", dest="blend", action="store_const", const=False)
    g.add_argument("--match", dest="match", action="store_const", const=True)
    g.add_argument("--no-match", dest="match", action="store_const", const=False)
    g.add_argument("--order", choices=("he-first", "pb-first"))
    g.add_argument("--black-threshold", type=float)
    g.add_argument("--bins", type=int)
    g.add_argument("--exact-quantiles", action="store_true")
    g.add_argument("--cg-tolerance", type=float)
    g.add_argument("--cg-max-iters", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="voxdiff", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("inpaint", help="inpaint a masked region of a volume")
    p.add_argument("--image")
    p.add_argument("--mask", help="binary volume; 1 = voxels to inpaint (see --mask-convention)")
    p.add_argument("--mask-convention", choices=("unknown", "known"), default="unknown")
    p.add_argument("--condition", help="conditioning manifest (condition.json) at latent resolution")
    p.add_argument("--tissue", help="full-resolution tissue labels (0 bg, 1 CSF, 2 GM, 3 WM)")
    p.add_argument("--concentration", help="full-resolution tumor concentration in [0, 1]")
    p.add_argument("--mode", choices=("healthy", "tumor"))
    p.add_argument("--denoiser", required=True, help="denoiser JSON (gaussian prior or affine parameters)")
    p.add_argument("--codec", choices=("block-moment", "identity"))
    p.add_argument("--config", help="TOML or JSON run configuration")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--batch", help="JSON manifest listing subjects")
    p.add_argument("--out-dir")
    p.add_argument("--no-postprocess", dest="postprocess_enabled", action="store_const", const=False)
    _add_schedule_flags(p)
    _add_post_flags(p)
    p.set_defaults(func=cmd_inpaint)

    p = sub.add_parser("synth", help="generate a volume with no known voxels")
    p.add_argument("--shape", type=int, nargs=3)
    p.add_argument("--like")
    p.add_argument("--condition")
    p.add_argument("--mode", choices=("healthy", "tumor"))
    p.add_argument("--denoiser", required=True)
    p.add_argument("--codec", choices=("block-moment", "identity"))
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    _add_schedule_flags(p)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train-denoiser", help="fit the affine denoiser by SGD")
    p.add_argument("--manifest", required=True, help='JSON {"pairs": [{"latent": .., "condition": ..}]}')
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--batch-size", type=int, default=1)
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    _add_schedule_flags(p)
    p.set_defaults(func=cmd_train_denoiser)

    p = sub.add_parser("postprocess", help="histogram matching and Poisson blending")
    p.add_argument("--generated", required=True)
    p.add_argument("--known", required=True)
    p.add_argument("--region", required=True, help="1 = generated region")
    p.add_argument("--out", required=True)
    _add_post_flags(p)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("evaluate", help="masked-region metrics")
    p.add_argument("--pred")
    p.add_argument("--gt")
    p.add_argument("--region", help="healthy evaluation mask")
    p.add_argument("--tumor-region")
    p.add_argument("--subject", default="subject")
    p.add_argument("--batch")
    p.add_argument("--ssim-window", type=int, default=7)
    p.add_argument("--sample-std", action="store_true")
    p.add_argument("--reference-table", choices=tuple(REFERENCE_TABLES))
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("maskgen", help="tumor and random healthy evaluation masks")
    p.add_argument("--gt", required=True)
    p.add_argument("--tumor-seg", required=True)
    p.add_argument("--semi-axes", type=float, nargs=3, default=(8.0, 8.0, 8.0))
    p.add_argument("--tumor-dilation", type=int, default=0)
    p.add_argument("--max-attempts", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_maskgen)

    p = sub.add_parser("schedule-dump", help="noise schedule and resampling plan as CSV")
    p.add_argument("--T", type=int)
    p.add_argument("--beta-start", type=float)
    p.add_argument("--beta-end", type=float)
    p.add_argument("--T-sample", dest="T_sample", type=int)
    p.add_argument("--jump-length", type=int)
    p.add_argument("--n-resample", type=int)
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_schedule_dump)
    return parser


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, VoxdiffError):
        return exc.exit_code
    if isinstance(exc, (FileNotFoundError, PermissionError, IsADirectoryError, OSError)):
        return 2
    if isinstance(exc, (FloatingPointError, ArithmeticError)):
        return 5
    if isinstance(exc, (ValueError, KeyError, TypeError, json.JSONDecodeError)):
        return 3
    return 1


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except (VoxdiffError, OSError, ValueError, KeyError, TypeError, ArithmeticError) as exc:
        code = exit_code_for(exc)
        print(f"voxdiff {args.command}: error: {exc}", file=sys.stderr)
        return code


__all__ = ["main", "build_parser", "exit_code_for"]
