"""Forward splatting: EWA projection and front-to-back alpha compositing.

`render` is the production path: a vectorised, tile-based rasteriser with
the usual early-out thresholds. `render_reference` is a deliberately naive
per-pixel loop used as a correctness oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._kernels import composite_tile
from .camera import NEAR_PLANE, CameraExtrinsics, CameraIntrinsics
from .errors import InvalidParameterError
from .gaussians import GaussianScene, quat_to_rotmat, sh_basis, sh_count, sigmoid

LOW_PASS = 0.3
ALPHA_MIN = 1.0 / 255.0
TRANSMITTANCE_MIN = 1e-4


@dataclass(frozen=True)
class RenderConfig:
    background: tuple[float, float, float] = (1.0, 1.0, 1.0)
    cutoff_sigma: float = 3.0
    tile_size: int = 16
    retain_contributors: bool = False
    # set both thresholds to 0 to composite every overlapping splat
    alpha_min: float = ALPHA_MIN
    transmittance_min: float = TRANSMITTANCE_MIN

    def __post_init__(self):
        if self.cutoff_sigma <= 0:
            raise InvalidParameterError("cutoff_sigma must be positive")
        if self.tile_size < 1:
            raise InvalidParameterError("tile_size must be >= 1")
        object.__setattr__(self, "background", tuple(float(v) for v in self.background))

    def exact(self) -> "RenderConfig":
        """Copy with early-out thresholds disabled."""
        return replace(self, alpha_min=0.0, transmittance_min=0.0)


@dataclass(frozen=True)
class Splat2D:
    center: np.ndarray
    cov2d: np.ndarray
    depth: float
    color: np.ndarray
    opacity: float
    source_index: int
    conic: np.ndarray = field(repr=False, default=None)

    def __post_init__(self):
        if self.conic is None:
            object.__setattr__(self, "conic", _inv2(self.cov2d))


def _inv2(m: np.ndarray) -> np.ndarray:
    a, b, c = m[..., 0, 0], m[..., 0, 1], m[..., 1, 1]
    det = a * c - b * b
    out = np.empty_like(m)
    out[..., 0, 0] = c / det
    out[..., 1, 1] = a / det
    out[..., 0, 1] = out[..., 1, 0] = -b / det
    return out


@dataclass
class Projection:
    """Per-Gaussian projected quantities plus intermediates for the backward pass."""

    visible: np.ndarray  # (N,) bool
    order: np.ndarray  # visible indices, depth-ascending, ties by index
    centers: np.ndarray  # (N, 2)
    cov2d: np.ndarray  # (N, 2, 2), low-pass floor included
    conics: np.ndarray  # (N, 2, 2)
    depths: np.ndarray  # (N,)
    radii: np.ndarray  # (N,) pixel half-extent at the cutoff
    colors: np.ndarray  # (N, 3) clamped
    color_active: np.ndarray  # (N, 3) bool, False where clamped
    opacities: np.ndarray  # (N,)
    cam_points: np.ndarray  # (N, 3)
    jacobians: np.ndarray  # (N, 2, 3)
    rotmats: np.ndarray  # (N, 3, 3)
    scales: np.ndarray  # (N, 3)
    cov3d: np.ndarray  # (N, 3, 3)
    sh_basis: np.ndarray  # (N, K)
    world_rotation: np.ndarray  # (3, 3)
    focal: float


def project_scene(
    scene: GaussianScene,
    extrinsics: CameraExtrinsics,
    intrinsics: CameraIntrinsics,
    config: RenderConfig,
) -> Projection:
    n = scene.count
    W = extrinsics.rotation
    t = extrinsics.to_camera(scene.positions).reshape(n, 3)
    front = t[:, 2] > NEAR_PLANE
    z = np.where(front, t[:, 2], 1.0)
    f = intrinsics.focal
    cx, cy = intrinsics.center

    jac = np.zeros((n, 2, 3))
    jac[:, 0, 0] = f / z
    jac[:, 1, 1] = f / z
    jac[:, 0, 2] = -f * t[:, 0] / z**2
    jac[:, 1, 2] = -f * t[:, 1] / z**2

    rot = quat_to_rotmat(scene.rotations).reshape(n, 3, 3)
    scales = np.exp(scene.log_scales)
    rs = rot * scales[:, None, :]
    cov3 = rs @ np.swapaxes(rs, 1, 2)
    m = jac @ W
    cov2 = m @ cov3 @ np.swapaxes(m, 1, 2)
    cov2 = 0.5 * (cov2 + np.swapaxes(cov2, 1, 2))
    cov2[:, 0, 0] += LOW_PASS
    cov2[:, 1, 1] += LOW_PASS
    conics = _inv2(cov2)

    centers = np.stack([f * t[:, 0] / z + cx, f * t[:, 1] / z + cy], -1)
    half_tr = 0.5 * (cov2[:, 0, 0] + cov2[:, 1, 1])
    det = cov2[:, 0, 0] * cov2[:, 1, 1] - cov2[:, 0, 1] ** 2
    lam_max = half_tr + np.sqrt(np.maximum(half_tr**2 - det, 0.0))
    radii = config.cutoff_sigma * np.sqrt(lam_max)
    on_image = (
        (centers[:, 0] + radii >= 0)
        & (centers[:, 0] - radii <= intrinsics.width)
        & (centers[:, 1] + radii >= 0)
        & (centers[:, 1] - radii <= intrinsics.height)
    )
    visible = front & on_image

    dirs = scene.positions - extrinsics.center
    dirs = dirs / np.maximum(np.linalg.norm(dirs, axis=-1, keepdims=True), 1e-12)
    basis = sh_basis(dirs, scene.sh_degree).reshape(n, sh_count(scene.sh_degree))
    raw = 0.5 + np.einsum("nk,nkc->nc", basis, scene.sh_coeffs)
    colors = np.clip(raw, 0.0, 1.0)
    color_active = (raw > 0.0) & (raw < 1.0)

    idx = np.flatnonzero(visible)
    order = idx[np.lexsort((idx, t[idx, 2]))]
    return Projection(
        visible=visible,
        order=order,
        centers=centers,
        cov2d=cov2,
        conics=conics,
        depths=t[:, 2],
        radii=radii,
        colors=colors,
        color_active=color_active,
        opacities=sigmoid(scene.opacity_logits),
        cam_points=t,
        jacobians=jac,
        rotmats=rot,
        scales=scales,
        cov3d=cov3,
        sh_basis=basis,
        world_rotation=W,
        focal=f,
    )


def project_gaussian(
    index: int,
    scene: GaussianScene,
    extrinsics: CameraExtrinsics,
    intrinsics: CameraIntrinsics,
    config: RenderConfig | None = None,
) -> Splat2D | None:
    """Project one Gaussian; returns None when it is culled."""
    if not 0 <= index < scene.count:
        raise InvalidParameterError(f"index {index} out of range for {scene.count} Gaussians")
    proj = project_scene(scene.subset([index]), extrinsics, intrinsics, config or RenderConfig())
    if not proj.visible[0]:
        return None
    return Splat2D(
        center=proj.centers[0],
        cov2d=proj.cov2d[0],
        depth=float(proj.depths[0]),
        color=proj.colors[0],
        opacity=float(proj.opacities[0]),
        source_index=index,
        conic=proj.conics[0],
    )


@dataclass
class TileRecord:
    """Dense contributor data for one tile: P pixels by K depth-sorted splats."""

    rows: slice
    cols: slice
    ids: np.ndarray  # (K,) source indices in depth order
    pixels: np.ndarray  # (P, 2) pixel centres
    alpha: np.ndarray  # (P, K) opacity*G, 0 where it did not contribute
    trans: np.ndarray  # (P, K) transmittance at entry where alpha > 0
    final_trans: np.ndarray  # (P,)


@dataclass
class RenderRecords:
    projection: Projection
    tiles: list[TileRecord]
    width: int
    height: int

    def pixel(self, y: int, x: int) -> list[tuple[int, float, float]]:
        """Ordered (source_index, G, transmittance at entry) for one pixel."""
        for tile in self.tiles:
            r, c = tile.rows, tile.cols
            if r.start <= y < r.stop and c.start <= x < c.stop:
                p = (y - r.start) * (c.stop - c.start) + (x - c.start)
                live = tile.alpha[p] > 0
                ids = tile.ids[live]
                gauss = tile.alpha[p, live] / self.projection.opacities[ids]
                return [
                    (int(i), float(g), float(tr))
                    for i, g, tr in zip(ids, gauss, tile.trans[p, live])
                ]
        raise InvalidParameterError(f"pixel ({y}, {x}) outside the image")


@dataclass
class RenderOutput:
    rgb: np.ndarray  # (H, W, 3)
    alpha: np.ndarray  # (H, W)
    contributors: RenderRecords | None = None


def _pixel_centers(rows: slice, cols: slice) -> np.ndarray:
    yy, xx = np.mgrid[rows, cols]
    return np.stack([xx.ravel() + 0.5, yy.ravel() + 0.5], -1).astype(np.float64)


def _tiles(intrinsics: CameraIntrinsics, tile: int):
    for y0 in range(0, intrinsics.height, tile):
        for x0 in range(0, intrinsics.width, tile):
            yield slice(y0, min(y0 + tile, intrinsics.height)), slice(
                x0, min(x0 + tile, intrinsics.width)
            )


def tile_members(proj: Projection, rows: slice, cols: slice) -> np.ndarray:
    """Depth-ordered ids of the splats whose cutoff box touches the tile."""
    o = proj.order
    c, r = proj.centers[o], proj.radii[o]
    hit = (
        (c[:, 0] + r >= cols.start + 0.5)
        & (c[:, 0] - r <= cols.stop - 0.5)
        & (c[:, 1] + r >= rows.start + 0.5)
        & (c[:, 1] - r <= rows.stop - 0.5)
    )
    return o[hit]


def render(
    scene: GaussianScene,
    extrinsics: CameraExtrinsics,
    intrinsics: CameraIntrinsics,
    config: RenderConfig | None = None,
) -> RenderOutput:
    config = config or RenderConfig()
    proj = project_scene(scene, extrinsics, intrinsics, config)
    h, w = intrinsics.height, intrinsics.width
    bg = np.asarray(config.background, dtype=np.float64)
    rgb = np.empty((h, w, 3))
    alpha = np.empty((h, w))
    records = []
    centers = np.ascontiguousarray(proj.centers)
    conics = np.ascontiguousarray(proj.conics)
    for rows, cols in _tiles(intrinsics, config.tile_size):
        pix = _pixel_centers(rows, cols)
        ids = tile_members(proj, rows, cols)
        k, p = len(ids), len(pix)
        store = config.retain_contributors
        a = np.empty((p, k) if store else (1, 1))
        trans = np.empty_like(a)
        col = np.empty((p, 3))
        final = np.empty(p)
        composite_tile(
            ids, centers, conics, proj.opacities, proj.colors, pix,
            config.cutoff_sigma**2, config.alpha_min, config.transmittance_min, bg,
            store, a, trans, col, final,
        )
        shape = (rows.stop - rows.start, cols.stop - cols.start)
        rgb[rows, cols] = col.reshape(*shape, 3)
        alpha[rows, cols] = (1.0 - final).reshape(shape)
        if config.retain_contributors:
            records.append(TileRecord(rows, cols, ids, pix, a, trans, final))
    contributors = RenderRecords(proj, records, w, h) if config.retain_contributors else None
    return RenderOutput(rgb, alpha, contributors)


def composite_pixel(
    splats,
    pixel,
    background,
    alpha_min: float = ALPHA_MIN,
    transmittance_min: float = TRANSMITTANCE_MIN,
):
    """Front-to-back blend of depth-sorted splats at one pixel.

    Returns (rgb, alpha, records) where records lists
    (source_index, G, transmittance at entry) for every contributing splat.
    """
    px, py = float(pixel[0]), float(pixel[1])
    r = g = b = 0.0
    trans = 1.0
    records = []
    for s in splats:
        dx, dy = px - s.center[0], py - s.center[1]
        q = s.conic
        gv = math.exp(-0.5 * (q[0, 0] * dx * dx + 2.0 * q[0, 1] * dx * dy + q[1, 1] * dy * dy))
        a = s.opacity * gv
        if a < alpha_min:
            continue
        nxt = trans * (1.0 - a)
        if nxt < transmittance_min:
            break
        w = a * trans
        r += w * s.color[0]
        g += w * s.color[1]
        b += w * s.color[2]
        records.append((s.source_index, gv, trans))
        trans = nxt
    bg = background
    rgb = np.array([r + trans * bg[0], g + trans * bg[1], b + trans * bg[2]])
    return rgb, 1.0 - trans, records


def render_reference(
    scene: GaussianScene,
    extrinsics: CameraExtrinsics,
    intrinsics: CameraIntrinsics,
    config: RenderConfig | None = None,
) -> RenderOutput:
    """Unoptimised oracle: every pixel visits every splat, no early outs."""
    config = config or RenderConfig()
    splats = []
    for i in range(scene.count):
        s = project_gaussian(i, scene, extrinsics, intrinsics, config)
        if s is not None:
            splats.append(s)
    splats.sort(key=lambda s: (s.depth, s.source_index))
    cut2 = config.cutoff_sigma**2
    h, w = intrinsics.height, intrinsics.width
    rgb = np.empty((h, w, 3))
    alpha = np.empty((h, w))
    for y in range(h):
        for x in range(w):
            px, py = x + 0.5, y + 0.5
            near = []
            for s in splats:
                dx, dy = px - s.center[0], py - s.center[1]
                q = s.conic
                if q[0, 0] * dx * dx + 2.0 * q[0, 1] * dx * dy + q[1, 1] * dy * dy <= cut2:
                    near.append(s)
            rgb[y, x], alpha[y, x], _ = composite_pixel(
                near, (px, py), config.background, alpha_min=0.0, transmittance_min=0.0
            )
    return RenderOutput(rgb, alpha)
