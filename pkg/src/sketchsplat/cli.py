"""Command-line entry point: ``sketchsplat <command> ...``."""
from __future__ import annotations

import argparse
import logging
import shlex
import sys
from dataclasses import replace

from .backward import finite_diff_check
from .camera import CameraIntrinsics, Circle, OrbitPose, orbit_to_extrinsics, pose_schedule
from .config import RunConfig, load_config
from .errors import SplatError
from .gaussians import random_scene
from .guidance import DirectoryGuidance, SyntheticGuidance
from .images import read_image, write_image
from .losses import CommandNoiseProvider, GuidanceTargetProvider
from .metrics import psnr, ssim
from .optim import init_from_pointcloud, init_sphere
from .render import RenderConfig, render
from .scene_io import load_point_cloud, load_scene, save_scene
from .train import fit


def _cmd_init(args) -> int:
    if args.points:
        points, colors = load_point_cloud(args.points)
        scene = init_from_pointcloud(points, colors, args.sh_degree)
    else:
        scene = init_sphere(args.sphere, args.radius, args.seed, args.sh_degree)
    save_scene(scene, args.out)
    print(f"wrote {scene.count} Gaussians to {args.out}")
    return 0


def _cmd_render(args) -> int:
    scene = load_scene(args.scene)
    pose = OrbitPose(Circle(args.circle), args.angle, args.radius)
    intr = CameraIntrinsics(args.fov, args.size, args.size)
    out = render(scene, orbit_to_extrinsics(pose), intr)
    write_image(out.rgb, args.out)
    return 0


def _cmd_fit(args) -> int:
    run = load_config(args.config) if args.config else RunConfig()
    train = run.train if args.seed is None else replace(run.train, seed=args.seed)
    if args.steps is not None:
        train = replace(train, total_steps=args.steps)
    intr = CameraIntrinsics(train.fov_y, train.resolution, train.resolution)
    schedule = pose_schedule(train.schedule_step_degrees, train.radius)
    if args.guidance:
        guidance = DirectoryGuidance(args.guidance, intr, schedule)
    else:
        guidance = SyntheticGuidance(load_scene(args.synthetic), intr, schedule, run.render)
    sketch = read_image(args.sketch) if args.sketch else None

    noise = None
    if args.noise_cmd:
        noise = CommandNoiseProvider(shlex.split(args.noise_cmd))
    elif args.mock_sds:
        noise = GuidanceTargetProvider(k=1.0)
    try:
        scene, records = fit(
            load_scene(args.scene), guidance, noise, sketch,
            train, run.render, run.groups, log_path=args.log,
        )
    finally:
        if isinstance(noise, CommandNoiseProvider):
            noise.close()
    save_scene(scene, args.out)
    last = records[-1]
    print(f"steps={last['step']} psnr={last['psnr']:.2f} gaussians={scene.count}")
    return 0


def _cmd_gradcheck(args) -> int:
    if args.scene:
        scene = load_scene(args.scene)
    else:
        scene = random_scene(args.random, args.seed, scale_range=(0.15, 0.5))
    pose = OrbitPose(Circle(args.circle), args.angle, args.radius)
    intr = CameraIntrinsics(args.fov, args.size, args.size)
    report = finite_diff_check(
        scene, orbit_to_extrinsics(pose), intr, RenderConfig().exact(), seed=args.seed, tolerance=1e-3
    )
    for line in report.lines():
        print(line)
    print("PASS" if report.passed else "FAIL")
    return 0 if report.passed else 1


def _cmd_export(args) -> int:
    save_scene(load_scene(args.scene), args.out)
    return 0


def _cmd_metrics(args) -> int:
    a, b = read_image(args.a), read_image(args.b)
    print(f"psnr={psnr(a, b):.2f} ssim={ssim(a, b):.4f}")
    return 0


def _add_pose_args(p: argparse.ArgumentParser, size: int) -> None:
    p.add_argument("--circle", choices=[c.value for c in Circle], default="h")
    p.add_argument("--angle", type=float, default=0.0, help="degrees")
    p.add_argument("--radius", type=float, default=3.0)
    p.add_argument("--fov", type=float, default=50.0, help="vertical field of view, degrees")
    p.add_argument("--size", type=int, default=size, help="square image side in pixels")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sketchsplat", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", help="create an initial scene file")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--points", help="PLY point cloud to seed from")
    src.add_argument("--sphere", type=int, metavar="N", help="N Gaussians in a ball")
    p.add_argument("--radius", type=float, default=1.0, help="ball radius for --sphere")
    p.add_argument("--sh-degree", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_init)

    p = sub.add_parser("render", help="render one orbit view to PNG")
    p.add_argument("scene")
    _add_pose_args(p, 256)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("fit", help="optimise a scene against guidance images")
    p.add_argument("--config")
    p.add_argument("--scene", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--guidance", help="directory of per-pose guidance PNGs")
    src.add_argument("--synthetic", help="ground-truth scene rendered as guidance")
    p.add_argument("--sketch", help="sketch PNG for the contour term")
    noise = p.add_mutually_exclusive_group()
    noise.add_argument("--noise-cmd", help="command speaking the noise-provider protocol")
    noise.add_argument("--mock-sds", action="store_true", help="use the guidance-target mock provider")
    p.add_argument("--steps", type=int, help="override total_steps")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out", required=True)
    p.add_argument("--log", help="metrics log path (NDJSON)")
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("gradcheck", help="finite-difference check of the backward pass")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("scene", nargs="?")
    src.add_argument("--random", type=int, metavar="N", help="use a random N-Gaussian scene")
    p.add_argument("--seed", type=int, default=0)
    _add_pose_args(p, 16)
    p.set_defaults(func=_cmd_gradcheck)

    p = sub.add_parser("export", help="rewrite a scene as a splat-viewer PLY")
    p.add_argument("scene")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_export)

    p = sub.add_parser("metrics", help="PSNR and SSIM between two PNGs")
    p.add_argument("a")
    p.add_argument("b")
    p.set_defaults(func=_cmd_metrics)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr)
    try:
        return args.func(args)
    except (SplatError, OSError, ValueError) as exc:
        print(f"sketchsplat {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
