"""Analytic gradients of the splatting renderer and a finite-difference harness."""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from ._kernels import backward_tile
from .camera import CameraExtrinsics, CameraIntrinsics
from .errors import InvalidParameterError, PreconditionError
from .gaussians import PARAM_GROUPS, GaussianScene, rotmat_grad_to_quat
from .render import RenderConfig, RenderOutput, render

FD_MAX_GAUSSIANS = 64


@dataclass
class GradientSet:
    d_position: np.ndarray
    d_rotation: np.ndarray
    d_log_scale: np.ndarray
    d_opacity_logit: np.ndarray
    d_sh: np.ndarray

    @classmethod
    def zeros_like(cls, scene: GaussianScene) -> "GradientSet":
        return cls(
            np.zeros_like(scene.positions),
            np.zeros_like(scene.rotations),
            np.zeros_like(scene.log_scales),
            np.zeros_like(scene.opacity_logits),
            np.zeros_like(scene.sh_coeffs),
        )

    def groups(self) -> dict[str, np.ndarray]:
        return dict(zip(PARAM_GROUPS, self.arrays()))

    def arrays(self):
        return (self.d_position, self.d_rotation, self.d_log_scale, self.d_opacity_logit, self.d_sh)

    def __iadd__(self, other: "GradientSet"):
        for a, b in zip(self.arrays(), other.arrays()):
            a += b
        return self

    def scaled(self, factor: float) -> "GradientSet":
        return GradientSet(*(a * factor for a in self.arrays()))

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def render_backward(
    scene: GaussianScene,
    extrinsics: CameraExtrinsics,
    intrinsics: CameraIntrinsics,
    config: RenderConfig,
    d_image: np.ndarray,
    output: RenderOutput | None = None,
) -> GradientSet:
    """Gradient of sum(d_image * rendered rgb) with respect to every parameter.

    `output` must come from a forward pass with ``retain_contributors``; when
    omitted the forward pass is recomputed here.
    """
    if output is None:
        output = render(scene, extrinsics, intrinsics, replace(config, retain_contributors=True))
    if output.contributors is None:
        raise PreconditionError("render_backward needs a RenderOutput with contributor records")
    d_image = np.asarray(d_image, dtype=np.float64)
    if d_image.shape != (intrinsics.height, intrinsics.width, 3):
        raise InvalidParameterError(f"d_image has shape {d_image.shape}")

    rec = output.contributors
    proj = rec.projection
    n = scene.count
    bg = np.asarray(config.background, dtype=np.float64)

    d_color = np.zeros((n, 3))
    d_opacity = np.zeros(n)
    d_center = np.zeros((n, 2))
    d_conic = np.zeros((n, 3))  # (xx, xy, yy) of -0.5 * sum w d d^T

    centers = np.ascontiguousarray(proj.centers)
    conics = np.ascontiguousarray(proj.conics)
    for tile in rec.tiles:
        if not len(tile.ids):
            continue
        g = np.ascontiguousarray(d_image[tile.rows, tile.cols].reshape(-1, 3))
        backward_tile(
            tile.ids, centers, conics, proj.opacities, proj.colors, tile.pixels, bg,
            tile.alpha, tile.trans, g,
            d_color, d_opacity, d_center, d_conic,
        )

    return _project_backward(scene, proj, d_color, d_opacity, d_center, d_conic)


def _project_backward(scene, proj, d_color, d_opacity, d_center, d_conic) -> GradientSet:
    n = scene.count
    vis = proj.visible
    grads = GradientSet.zeros_like(scene)
    if not vis.any():
        return grads

    # colour -> SH (view direction held constant)
    d_raw = np.where(proj.color_active, d_color, 0.0)
    grads.d_sh[:] = proj.sh_basis[:, :, None] * d_raw[:, None, :]

    op = proj.opacities
    grads.d_opacity_logit[:] = d_opacity * op * (1.0 - op)

    # conic -> 2D covariance
    gq = np.empty((n, 2, 2))
    gq[:, 0, 0] = d_conic[:, 0]
    gq[:, 0, 1] = gq[:, 1, 0] = d_conic[:, 1]
    gq[:, 1, 1] = d_conic[:, 2]
    q = proj.conics
    g_cov2 = -q @ gq @ q

    W = proj.world_rotation
    J = proj.jacobians
    M = J @ W
    cov3 = proj.cov3d
    g_cov3 = np.swapaxes(M, 1, 2) @ g_cov2 @ M
    g_M = 2.0 * g_cov2 @ M @ cov3
    g_J = g_M @ W.T

    # J and the projected centre both depend on the camera-space point
    f = proj.focal
    tx, ty, tz = proj.cam_points[:, 0], proj.cam_points[:, 1], proj.cam_points[:, 2]
    tz = np.where(vis, tz, 1.0)
    g_t = np.einsum("nij,ni->nj", J, d_center)
    g_t[:, 0] += -f / tz**2 * g_J[:, 0, 2]
    g_t[:, 1] += -f / tz**2 * g_J[:, 1, 2]
    g_t[:, 2] += (
        -f / tz**2 * (g_J[:, 0, 0] + g_J[:, 1, 1])
        + 2 * f * tx / tz**3 * g_J[:, 0, 2]
        + 2 * f * ty / tz**3 * g_J[:, 1, 2]
    )
    grads.d_position[:] = g_t @ W

    # Sigma = R diag(s^2) R^T
    R = proj.rotmats
    s2 = proj.scales**2
    g_cov3 = 0.5 * (g_cov3 + np.swapaxes(g_cov3, 1, 2))
    g_R = 2.0 * g_cov3 @ R * s2[:, None, :]
    rtgr = np.einsum("nij,nik,nkj->nj", R, g_cov3, R)
    grads.d_log_scale[:] = 2.0 * s2 * rtgr
    grads.d_rotation[:] = rotmat_grad_to_quat(scene.rotations, g_R)

    for a in grads.arrays():
        a[~vis] = 0.0
    return grads


@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    skipped: dict[str, int]
    checked: dict[str, int]
    tolerance: float = 1e-3

    @property
    def passed(self) -> bool:
        return all(v < self.tolerance for v in self.max_rel_error.values())

    def lines(self) -> list[str]:
        return [
            f"{name:14s} max_rel_err={err:.3e} checked={self.checked[name]} "
            f"skipped={self.skipped[name]} {'PASS' if err < self.tolerance else 'FAIL'}"
            for name, err in self.max_rel_error.items()
        ]


def _structure(scene, extrinsics, intrinsics, config):
    """Discrete state of a render: anything whose change makes it non-smooth."""
    out = render(scene, extrinsics, intrinsics, replace(config, retain_contributors=True))
    rec = out.contributors
    p = rec.projection
    parts = [p.visible.tobytes(), p.order.tobytes(), p.color_active.tobytes()]
    for t in rec.tiles:
        parts.append(t.ids.tobytes())
        parts.append((t.alpha > 0).tobytes())
    return out, b"".join(parts)


def finite_diff_check(
    scene: GaussianScene,
    extrinsics: CameraExtrinsics,
    intrinsics: CameraIntrinsics,
    config: RenderConfig,
    seed: int = 0,
    h: float = 1e-4,
    tolerance: float = 1e-3,
    loss_weights: np.ndarray | None = None,
) -> GradCheckReport:
    """Compare render_backward with central differences on a random linear loss.

    The loss is sum(R * image) for a seeded random R. Perturbations that flip
    any discrete render state (culling, depth order, cutoff membership, colour
    clamping) are skipped and counted.
    """
    if scene.count > FD_MAX_GAUSSIANS:
        raise InvalidParameterError(
            f"finite_diff_check is capped at {FD_MAX_GAUSSIANS} Gaussians, got {scene.count}"
        )
    shape = (intrinsics.height, intrinsics.width, 3)
    if loss_weights is None:
        loss_weights = np.random.default_rng(seed).standard_normal(shape)
    base_out, base_sig = _structure(scene, extrinsics, intrinsics, config)
    analytic = render_backward(scene, extrinsics, intrinsics, config, loss_weights, base_out)

    errors, skipped, checked = {}, {}, {}
    for name, grad in analytic.groups().items():
        params = scene.parameters()[name]
        numeric = np.zeros_like(params)
        ok = np.zeros(params.shape, dtype=bool)
        for idx in np.ndindex(params.shape):
            vals = []
            for sign in (1.0, -1.0):
                probe = scene.copy()
                probe.parameters()[name][idx] += sign * h
                out, sig = _structure(probe, extrinsics, intrinsics, config)
                if sig != base_sig:
                    break
                vals.append(float(np.sum(loss_weights * out.rgb)))
            else:
                numeric[idx] = (vals[0] - vals[1]) / (2 * h)
                ok[idx] = True
        a, b = grad[ok], numeric[ok]
        # entries far below the group's scale are judged against that scale
        floor = max(1e-4 * float(np.max(np.abs(b), initial=0.0)), 1e-9)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
        errors[name] = float(np.max(np.abs(a - b) / denom, initial=0.0))
        skipped[name] = int((~ok).sum())
        checked[name] = int(ok.sum())
    return GradCheckReport(errors, skipped, checked, tolerance)
