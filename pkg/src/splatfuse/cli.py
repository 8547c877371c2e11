"""Command-line front end: synth | reconstruct | render | evaluate.

Configuration precedence: command-line flags > --config file > scene depth
hints (scene.txt, d_near/d_far only) > built-in defaults.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .metrics import depth_metrics, psnr, ssim
from .pipeline import Models, StageError, Timings, reconstruct
from .rasterizer import render
from .scene_io import (
    EngineConfig,
    export_ply,
    format_report,
    import_ply,
    load_scene,
    parse_key_values,
    read_intrinsics,
    read_pose,
    write_depth,
    write_image,
    write_json,
)
from .synthetic import PRESETS, generate_scene

log = logging.getLogger("splatfuse")

_CONFIG_FIELDS = [f.name for f in fields(EngineConfig)]


def parse_views(text: str) -> list[int]:
    try:
        ids = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated view indices, got {text!r}")
    if not ids or min(ids) < 0:
        raise argparse.ArgumentTypeError(f"expected non-negative view indices, got {text!r}")
    return ids


def parse_resolution(text: str) -> tuple[int, int]:
    """``WxH`` -> (height, width)."""
    try:
        w, h = (int(p) for p in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected WIDTHxHEIGHT, got {text!r}")
    return h, w


def resolve_config(args, scene=None) -> EngineConfig:
    cfg = EngineConfig()
    file_keys: set[str] = set()
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = EngineConfig.from_text(text)
        file_keys = set(parse_key_values(text))
    flags = {k: getattr(args, k) for k in _CONFIG_FIELDS if getattr(args, k, None) is not None}
    hint = scene.depth_hint() if scene is not None else None
    if hint is not None:
        # scene hints only fill in what neither the file nor the flags set
        extra = {k: v for k, v in zip(("d_near", "d_far"), hint) if k not in file_keys and k not in flags}
        if extra:
            cfg = cfg.updated(extra)
    return cfg.updated(flags)


def _manifest(args, cfg: EngineConfig | None, timings: Timings, **extra) -> dict:
    return {
        "command": args.command,
        "config": asdict(cfg) if cfg is not None else None,
        "seed": args.seed,
        "threads": args.threads,
        "timings_ms": {k: round(v, 3) for k, v in timings.ms.items()},
        **extra,
    }


def _manifest_path(args, output: Path) -> Path:
    if args.manifest:
        return Path(args.manifest)
    if output.is_dir():
        return output / "manifest.json"
    return output.with_name(output.name + ".manifest.json")


def _check_views(ids: list[int], n: int, what: str) -> None:
    bad = [i for i in ids if i >= n]
    if bad:
        raise ValueError(f"{what} {bad} out of range for a scene with {n} views")


def cmd_synth(args) -> int:
    timings = Timings()
    out = Path(args.out)
    with timings.stage("synth"):
        kw = {}
        if args.preset == "plane-wall":
            kw = {k: v for k, v in (("depth", args.wall_depth), ("baseline", args.baseline)) if v is not None}
        scene = generate_scene(args.preset, args.seed, args.views, args.resolution, out=out, **kw)
    print(f"wrote {len(scene.poses)} views of {args.preset} to {out}")
    with timings.stage("manifest"):
        write_json(
            _manifest_path(args, out),
            _manifest(
                args,
                None,
                timings,
                preset=args.preset,
                views=list(range(len(scene.poses))),
                resolution=list(args.resolution),
                outputs=[str(out)],
            ),
        )
    return 0


def _reconstruct(args, timings: Timings, view_ids):
    with timings.stage("load"):
        scene = load_scene(args.scene)
        cfg = resolve_config(args, scene)
        _check_views(view_ids, len(scene), "views")
        models = Models.from_config(cfg)
    log.info("config: %s", asdict(cfg))
    rec = reconstruct(scene.views, view_ids, cfg, models, threads=args.threads)
    timings.ms.update({k: timings.ms.get(k, 0.0) + v for k, v in rec.timings.ms.items()})
    return scene, cfg, rec


def _print_stats(rec) -> None:
    for t, s in enumerate(rec.log.steps):
        print(
            f"view {t}: global {s.input_global} + local {s.input_local} - merged {s.merged} "
            f"= {s.output} ({100 * s.reduction_ratio:.1f}% reduced)"
        )
    print(
        f"total: {rec.log.final_count} gaussians from {rec.log.total_local} pixels, "
        f"reduction {100 * rec.log.reduction_ratio:.1f}%"
    )


def cmd_reconstruct(args) -> int:
    timings = Timings()
    scene, cfg, rec = _reconstruct(args, timings, args.views)
    out = Path(args.out)
    with timings.stage("export"):
        export_ply(rec.primitives, out)
    _print_stats(rec)
    with timings.stage("manifest"):
        write_json(
            _manifest_path(args, out),
            _manifest(
                args,
                cfg,
                timings,
                scene=str(scene.root),
                views=list(args.views),
                outputs=[str(out)],
                num_gaussians=len(rec.primitives),
                reduction_ratio=rec.log.reduction_ratio,
            ),
        )
    return 0


def cmd_render(args) -> int:
    timings = Timings()
    with timings.stage("load"):
        prims = import_ply(args.ply)
        scene = None
        if args.scene is not None:
            scene = load_scene(args.scene)
            _check_views([args.view], len(scene), "view")
            pose, intr = scene.views[args.view].pose, scene.intrinsics
        else:
            missing = [n for n in ("pose", "intrinsics", "width", "height") if getattr(args, n) is None]
            if missing:
                raise ValueError("render needs --scene/--view or --pose/--intrinsics/--width/--height")
            pose = read_pose(args.pose)
            intr = read_intrinsics(args.intrinsics, args.width, args.height)
        cfg = resolve_config(args, scene)
    with timings.stage("render"):
        frame = render(prims, pose, intr, cfg.background, tile=cfg.tile_size, threads=args.threads)
    outputs = [args.out]
    with timings.stage("write"):
        write_image(args.out, frame.color)
        if args.depth_out:
            write_depth(args.depth_out, frame.depth)
            outputs.append(args.depth_out)
    print(f"rendered {len(prims)} gaussians to {args.out} (coverage {frame.alpha.mean():.3f})")
    with timings.stage("manifest"):
        write_json(
            _manifest_path(args, Path(args.out)),
            _manifest(
                args,
                cfg,
                timings,
                ply=str(args.ply),
                scene=str(args.scene) if args.scene else None,
                views=[args.view] if args.scene else [],
                outputs=outputs,
            ),
        )
    return 0


def evaluate_targets(scene, rec, cfg: EngineConfig, targets: list[int], threads: int = 1) -> dict:
    """Render every target view and average the image and depth metrics."""
    img_psnr, img_ssim, dms = [], [], []
    for t in targets:
        view = scene.views[t]
        frame = render(rec.primitives, view.pose, view.intrinsics, cfg.background, tile=cfg.tile_size, threads=threads)
        img_psnr.append(psnr(frame.color, view.image))
        img_ssim.append(ssim(frame.color, view.image))
        if scene.depths is not None:
            mask = (frame.alpha > 0.5) & (scene.depths[t] > 0)
            if mask.any():
                dms.append(depth_metrics(frame.depth, scene.depths[t], mask))
    report = {
        "psnr": float(np.mean(img_psnr)),
        "ssim": float(np.mean(img_ssim)),
        "num_gaussians": len(rec.primitives),
        "reduction_ratio": rec.log.reduction_ratio,
        "timings_ms": {},
    }
    for key in ("abs_diff", "abs_rel", "delta_1_25", "delta_1_10"):
        report[key] = float(np.mean([getattr(m, key) for m in dms])) if dms else None
    return report


def cmd_evaluate(args) -> int:
    timings = Timings()
    scene, cfg, rec = _reconstruct(args, timings, args.context)
    with timings.stage("evaluate"):
        _check_views(args.targets, len(scene), "targets")
        report = evaluate_targets(scene, rec, cfg, args.targets, args.threads)
    if args.timings:
        report["timings_ms"] = {k: round(v, 3) for k, v in timings.ms.items()}
    out = Path(args.out)
    with timings.stage("write"):
        text = format_report(report)
        out.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    with timings.stage("manifest"):
        write_json(
            _manifest_path(args, out),
            _manifest(
                args,
                cfg,
                timings,
                scene=str(scene.root),
                views=list(args.context),
                targets=list(args.targets),
                outputs=[str(out)],
            ),
        )
    return 0


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("engine config (overrides --config)")
    for name in _CONFIG_FIELDS:
        g.add_argument("--" + name.replace("_", "-"), dest=name, default=None, metavar="V")


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="key = value config file; flags override its values")
    shared.add_argument("--threads", type=int, default=1, help="worker cap (default 1)")
    shared.add_argument("--seed", type=int, default=0, help="RNG seed for synthetic data (default 0)")
    shared.add_argument("--verbose", "-v", action="store_true")
    shared.add_argument("--manifest", help="run manifest path (default: next to the main output)")

    parser = argparse.ArgumentParser(
        prog="splatfuse",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[shared], help="generate a synthetic scene")
    p.add_argument("--preset", choices=PRESETS, default="box-room")
    p.add_argument("--views", type=int, default=10)
    p.add_argument("--resolution", type=parse_resolution, default=(192, 256), metavar="WxH", help="default 256x192")
    p.add_argument("--wall-depth", type=float, help="plane-wall only: wall depth in meters")
    p.add_argument("--baseline", type=float, help="plane-wall only: camera baseline in meters")
    p.add_argument("--out", required=True, help="output scene directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("reconstruct", parents=[shared], help="reconstruct gaussians from posed views")
    p.add_argument("--scene", required=True)
    p.add_argument("--views", type=parse_views, required=True, help="comma-separated view indices, fused in order")
    p.add_argument("--out", required=True, help="output PLY")
    _add_config_flags(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("render", parents=[shared], help="render a PLY from a pose")
    p.add_argument("--ply", required=True)
    p.add_argument("--scene", help="take pose and intrinsics from this scene")
    p.add_argument("--view", type=int, default=0)
    p.add_argument("--pose", help="4x4 camera-to-world pose file")
    p.add_argument("--intrinsics", help="3x3 intrinsics file")
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--out", required=True, help="output color PNG")
    p.add_argument("--depth-out", help="output 16-bit depth PNG (millimeters)")
    _add_config_flags(p)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("evaluate", parents=[shared], help="reconstruct, render targets, report metrics")
    p.add_argument("--scene", required=True)
    p.add_argument("--context", type=parse_views, required=True)
    p.add_argument("--targets", type=parse_views, required=True)
    p.add_argument("--out", required=True, help="output JSON report")
    p.add_argument("--timings", action="store_true", help="include wall-clock timings in the report")
    _add_config_flags(p)
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as exc:
        print(f"error: [{args.command}] {exc}", file=sys.stderr)
        return 1
    log.info("%s finished in %.1f s", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
