"""Multi-view guided optimisation of a Gaussian scene.

Each step renders a batch of schedule poses and combines up to three
image-space signals per view before one Adam update:

* structural: distribution transfer toward the pose's guidance image, SDS on
  the transferred image, chained back through the transfer;
* colour: pose- and schedule-weighted MSE against the guidance image;
* sketch: contour-feature distance to the input sketch, at the front view
  or at every horizontal pose (``sketch_views``).

The metrics log is newline-delimited JSON, one object per step with keys
step, loss_color, loss_sketch, sds_grad_norm, psnr, lambda_linear, millis.
Disabled terms are logged as null.
"""
from __future__ import annotations

import json
import logging
import time
import zlib
from dataclasses import replace
from pathlib import Path

import numpy as np

from .backward import GradientSet, render_backward
from .camera import CameraIntrinsics, Circle, orbit_to_extrinsics, pose_schedule, pose_weight
from .config import ParamGroupConfig, TrainConfig
from .errors import FitError
from .gaussians import GaussianScene, prune
from .guidance import distribution_transfer, distribution_transfer_backward
from .losses import builtin_encoder, color_loss, sds_grad, sketch_loss
from .metrics import psnr
from .optim import AdamState, adam_step
from .render import RenderConfig, render

log = logging.getLogger(__name__)

LOG_FIELDS = ("step", "loss_color", "loss_sketch", "sds_grad_norm", "psnr", "lambda_linear", "millis")


def rng_stream(seed: int, label: str) -> np.random.Generator:
    """Independent generator derived from the run seed and a stable label."""
    return np.random.default_rng([seed, zlib.crc32(label.encode())])


class PoseBatcher:
    """Seeded shuffle over the schedule, consumed `batch` poses at a time."""

    def __init__(self, schedule, batch: int, rng: np.random.Generator):
        self.schedule = list(schedule)
        self.batch = batch
        self.rng = rng
        self._queue: list[int] = []

    def next(self):
        out = []
        while len(out) < self.batch:
            if not self._queue:
                self._queue = list(self.rng.permutation(len(self.schedule)))
            out.append(self.schedule[self._queue.pop(0)])
        return out


def _sketch_applies(pose, views: str) -> bool:
    if pose.circle is not Circle.HORIZONTAL:
        return False
    return views == "horizontal" or pose.angle % 360 == 0


def fit(
    scene: GaussianScene,
    guidance,
    noise=None,
    sketch: np.ndarray | None = None,
    config: TrainConfig | None = None,
    render_config: RenderConfig | None = None,
    groups: ParamGroupConfig | None = None,
    encoder=None,
    log_path=None,
    callback=None,
) -> tuple[GaussianScene, list[dict]]:
    """Optimise `scene` and return it with the per-step metrics records.

    `guidance` is a callable (step, scene) -> GuidanceSet, re-invoked every
    ``guidance_refresh_interval`` steps. `noise` is a noise provider; if it
    has a ``set_target`` method it receives each view's guidance image
    before being queried.
    """
    config = config or TrainConfig()
    render_config = replace(render_config or RenderConfig(), retain_contributors=True)
    groups = groups or ParamGroupConfig()
    use_sds = config.use_sds and noise is not None
    use_sketch = config.use_sketch and sketch is not None
    if config.use_sds and noise is None:
        log.warning("SDS term enabled but no noise provider given; term disabled")
    if config.use_sketch and sketch is None and config.sketch_weight:
        log.warning("sketch term enabled but no sketch given; term disabled")

    intr = CameraIntrinsics(config.fov_y, config.resolution, config.resolution)
    schedule = pose_schedule(config.schedule_step_degrees, config.radius)
    cams = {p: orbit_to_extrinsics(p) for p in schedule}
    batcher = PoseBatcher(schedule, config.batch_poses, rng_stream(config.seed, "poses"))
    t_rng = rng_stream(config.seed, "sds-timestep")
    noise_rng = rng_stream(config.seed, "sds-noise")
    encoder = encoder or builtin_encoder()
    sketch_feats = encoder(sketch) if use_sketch else None
    set_target = getattr(noise, "set_target", None)

    state = AdamState.for_scene(scene)
    records = []
    sink = open(log_path, "w") if log_path else None
    current = None
    try:
        for step in range(1, config.total_steps + 1):
            t0 = time.perf_counter()
            if current is None or (step - 1) % config.guidance_refresh_interval == 0:
                try:
                    current = guidance(step, scene)
                except Exception as exc:
                    raise FitError(step, f"guidance provider failed: {exc}") from exc
            lam = step / config.total_steps
            poses = batcher.next()
            grads = GradientSet.zeros_like(scene)
            c_vals, s_vals, sds_norms, psnrs = [], [], [], []
            for pose in poses:
                ext = cams[pose]
                out = render(scene, ext, intr, render_config)
                target = current[pose]
                psnrs.append(psnr(out.rgb, target))
                d_img = np.zeros_like(out.rgb)
                if config.use_color:
                    rep = color_loss(
                        target, out.rgb, pose_weight(pose, clamp=not config.raw_pose_weight),
                        step, config.total_steps,
                    )
                    c_vals.append(rep.value)
                    d_img += config.color_weight * rep.d_image
                if use_sds:
                    transferred = distribution_transfer(out.rgb, target)
                    t = int(t_rng.integers(config.sds_t_min, config.sds_t_max + 1))
                    seed = int(noise_rng.integers(2**63 - 1))
                    try:
                        if set_target is not None:
                            set_target(target)
                        d_t = sds_grad(noise, transferred, t, seed, config.prompt)
                    except Exception as exc:
                        raise FitError(step, f"noise provider failed: {exc}") from exc
                    sds_norms.append(float(np.linalg.norm(d_t)))
                    d_img += config.sds_weight * distribution_transfer_backward(out.rgb, target, d_t)
                if use_sketch and _sketch_applies(pose, config.sketch_views):
                    rep = sketch_loss(encoder, sketch, out.rgb, config.sketch_weight, sketch_feats)
                    s_vals.append(rep.value)
                    d_img += rep.d_image
                if d_img.any():
                    grads += render_backward(scene, ext, intr, render_config, d_img, out)
            grads = grads.scaled(1.0 / len(poses))
            if not grads.is_finite():
                bad = [k for k, a in grads.groups().items() if not np.isfinite(a).all()]
                raise FitError(step, f"non-finite gradient in {', '.join(bad)}")
            scene, state = adam_step(scene, grads, state, groups)
            if config.prune_interval and step % config.prune_interval == 0:
                keep = np.flatnonzero(scene.opacities >= config.prune_threshold)
                if len(keep) < scene.count:
                    scene = prune(scene, config.prune_threshold)
                    state = state.subset(keep)

            rec = {
                "step": step,
                "loss_color": float(np.mean(c_vals)) if config.use_color else None,
                "loss_sketch": float(np.mean(s_vals)) if s_vals else (0.0 if use_sketch else None),
                "sds_grad_norm": float(np.mean(sds_norms)) if use_sds else None,
                "psnr": float(np.mean(psnrs)),
                "lambda_linear": lam,
                "millis": round((time.perf_counter() - t0) * 1000.0, 3),
            }
            records.append(rec)
            if sink:
                sink.write(json.dumps(rec) + "\n")
            if callback is not None:
                callback(step, scene, rec)
    finally:
        if sink:
            sink.close()
    return scene, records


def read_metrics_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines() if line.strip()]
