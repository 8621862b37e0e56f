"""Command line front end.

Subcommands: register, apply, invert, fuse, evaluate, phantom. Exit codes:
0 success, 1 usage error, 2 data error (unreadable or inconsistent inputs),
3 non-convergence (field inversion or certification failed).
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .config import RunConfig, dumps_config, load_config
from .errors import CertificateError, NonConvergentError, VoxRegError
from .fusion import fuse
from .metrics import evaluate
from .nifti import (
    read_field,
    read_labels,
    read_volume,
    write_nifti,
)
from .phantom import make_phantom, preset, truth_field
from .registration import apply_transform, register_pipeline
from .report import (
    plot_metrics,
    plot_trace,
    read_affine,
    write_affine,
    write_metrics_csv,
    write_metrics_text,
    write_trace,
)
from .transforms import invert_field

logger = logging.getLogger(__name__)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voxreg",
        description="multimodal volume registration, warping, fusion and overlap scoring",
    )
    parser.add_argument("--verbose", action="store_true", help="log stage progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p_reg = sub.add_parser("register", help="register a moving volume onto a fixed volume")
    p_reg.add_argument("--fixed", help="fixed volume (falls back to the config's fixed path)")
    p_reg.add_argument("--moving", help="moving volume (falls back to the config's moving path)")
    p_reg.add_argument("--out", metavar="PREFIX", help="output prefix (falls back to the config)")
    p_reg.add_argument("--config", help="INI run configuration (defaults used otherwise)")
    p_reg.add_argument("--window", type=int, help="correlation window side in voxels (default 5)")
    p_reg.add_argument("--epsilon2", type=float, help="inverse-residual tolerance factor (default 0.1)")
    p_reg.add_argument("--plots", metavar="DIR", help="render the trace figure into DIR")

    p_apply = sub.add_parser("apply", help="warp a volume or label map through saved transforms")
    p_apply.add_argument("--input", required=True)
    p_apply.add_argument("--like", required=True, help="volume whose grid the output uses")
    p_apply.add_argument("--out", required=True)
    p_apply.add_argument("--affine", help="affine text file from register")
    p_apply.add_argument("--warp", help="displacement field from register")
    p_apply.add_argument("--labels", action="store_true", help="treat input as a label map")
    p_apply.add_argument("--mode", choices=("trilinear", "nearest"), default="trilinear")

    p_inv = sub.add_parser("invert", help="invert a displacement field")
    p_inv.add_argument("--warp", required=True)
    p_inv.add_argument("--out", required=True)
    p_inv.add_argument("--epsilon2", type=float, help="inverse-residual tolerance factor (default 0.1)")

    p_fuse = sub.add_parser("fuse", help="stack a fixed volume and a registered volume")
    p_fuse.add_argument("--fixed", required=True)
    p_fuse.add_argument("--registered", required=True)
    p_fuse.add_argument("--out", required=True)

    p_eval = sub.add_parser("evaluate", help="overlap and surface metrics for label maps")
    p_eval.add_argument("--pred", required=True)
    p_eval.add_argument("--gt", required=True)
    p_eval.add_argument("--out", required=True, metavar="PREFIX")
    p_eval.add_argument("--config", help="INI run configuration (hd95 section)")
    p_eval.add_argument("--penalty-mm", type=float, help="missing-class distance penalty (default 100)")
    p_eval.add_argument("--percentile", type=float, help="surface-distance percentile (default 95)")
    p_eval.add_argument("--plots", metavar="DIR", help="render the metrics figure into DIR")

    p_ph = sub.add_parser("phantom", help="write a synthetic test pair with known truth")
    p_ph.add_argument("--preset", choices=("small", "demo"), default="demo")
    p_ph.add_argument("--out", required=True, metavar="DIR")
    p_ph.add_argument("--seed", type=int, help="override the preset noise seed")
    return parser


def _load_run_config(path: str | None) -> RunConfig:
    return load_config(path) if path else RunConfig()


def _cmd_register(args) -> int:
    cfg = _load_run_config(args.config)
    if args.window is not None:
        cfg.similarity = replace(cfg.similarity, window_n=args.window)
    if args.epsilon2 is not None:
        cfg.inversion = replace(cfg.inversion, epsilon2=args.epsilon2)
    fixed_path = args.fixed or cfg.fixed_path
    moving_path = args.moving or cfg.moving_path
    prefix = args.out or cfg.output_prefix
    if not (fixed_path and moving_path and prefix):
        print(
            "error: register needs --fixed, --moving and --out "
            "(on the command line or in the config)",
            file=sys.stderr,
        )
        return 1
    fixed = read_volume(fixed_path)
    moving = read_volume(moving_path)
    result = register_pipeline(moving, fixed, list(cfg.stages), cfg.similarity, cfg.inversion)

    write_affine(f"{prefix}.affine.txt", result.pre_affine)
    # echo the full effective configuration so the run is self-describing
    header = [line for line in dumps_config(cfg).splitlines() if line.strip()]
    header.append(f"final_score: {result.final_score!r}")
    write_trace(f"{prefix}.trace.txt", result.trace, header)
    fld = None
    if result.diffeo is not None:
        fld = result.diffeo.forward
        write_nifti(f"{prefix}.warp.nii.gz", result.diffeo.forward)
        write_nifti(f"{prefix}.inverse_warp.nii.gz", result.diffeo.inverse)
    warped = apply_transform(moving, result.pre_affine, fld, fixed.meta, "trilinear")
    write_nifti(f"{prefix}.warped.nii.gz", warped)
    if args.plots:
        Path(args.plots).mkdir(parents=True, exist_ok=True)
        plot_trace(result.trace, Path(args.plots) / "trace.png")
    print(f"final score {result.final_score:.6f} after {len(result.trace)} accepted iterations")
    if result.diffeo is not None:
        print(f"inverse residual {result.diffeo.residual_inf_norm:.6g} mm")
    return 0


def _cmd_apply(args) -> int:
    like = read_volume(args.like)
    params = read_affine(args.affine) if args.affine else None
    fld = read_field(args.warp) if args.warp else None
    if args.labels:
        src = read_labels(args.input)
        out = apply_transform(src, params, fld, like.meta, "nearest")
    else:
        src = read_volume(args.input)
        out = apply_transform(src, params, fld, like.meta, args.mode)
    write_nifti(args.out, out)
    print(f"wrote {args.out}")
    return 0


def _cmd_invert(args) -> int:
    from .transforms import InversionConfig

    fld = read_field(args.warp)
    inv_cfg = InversionConfig() if args.epsilon2 is None else InversionConfig(epsilon2=args.epsilon2)
    result = invert_field(fld, inv_cfg)
    write_nifti(args.out, result.inverse)
    print(f"wrote {args.out} (residual {result.residual_inf_norm:.6g} mm)")
    return 0


def _cmd_fuse(args) -> int:
    fixed = read_volume(args.fixed)
    registered = read_volume(args.registered)
    fused = fuse(fixed, registered)
    write_nifti(args.out, fused)
    print(f"wrote {args.out}")
    return 0


def _cmd_evaluate(args) -> int:
    cfg = _load_run_config(args.config)
    hd_cfg = cfg.hd95
    if args.penalty_mm is not None:
        hd_cfg = replace(hd_cfg, penalty_mm=args.penalty_mm)
    if args.percentile is not None:
        hd_cfg = replace(hd_cfg, percentile=args.percentile)
    pred = read_labels(args.pred)
    gt = read_labels(args.gt)
    report = evaluate(pred, gt, hd_cfg)
    prefix = args.out
    write_metrics_text(f"{prefix}.metrics.txt", report)
    write_metrics_csv(f"{prefix}.metrics.csv", report)
    if args.plots:
        Path(args.plots).mkdir(parents=True, exist_ok=True)
        plot_metrics(report, Path(args.plots) / "metrics.png")
    with open(f"{prefix}.metrics.txt", "r", encoding="utf-8") as fh:
        sys.stdout.write(fh.read())
    return 0


def _cmd_phantom(args) -> int:
    spec = preset(args.preset)
    if args.seed is not None:
        spec = replace(spec, seed=args.seed)
    ph = make_phantom(spec)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_nifti(out / "fixed.nii.gz", ph.fixed)
    write_nifti(out / "moving.nii.gz", ph.moving)
    write_nifti(out / "fixed_labels.nii.gz", ph.fixed_labels)
    write_nifti(out / "moving_labels.nii.gz", ph.moving_labels)
    write_nifti(out / "truth_warp.nii.gz", truth_field(ph.true_map, spec.meta))
    run_cfg = RunConfig(
        fixed_path=str(out / "fixed.nii.gz"),
        moving_path=str(out / "moving.nii.gz"),
        output_prefix=str(out / "reg"),
        seed=spec.seed,
    )
    with open(out / "config.ini", "w", encoding="utf-8") as fh:
        fh.write(dumps_config(run_cfg))
    print(f"wrote phantom pair to {out}")
    return 0


_COMMANDS = {
    "register": _cmd_register,
    "apply": _cmd_apply,
    "invert": _cmd_invert,
    "fuse": _cmd_fuse,
    "evaluate": _cmd_evaluate,
    "phantom": _cmd_phantom,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 1
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except (NonConvergentError, CertificateError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (VoxRegError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
