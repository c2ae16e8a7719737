"""Scene initialisation and per-group Adam."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .backward import GradientSet
from .config import ParamGroupConfig
from .errors import InvalidParameterError
from .gaussians import PARAM_GROUPS, GaussianScene, logit, rgb_to_sh0, sh_count

INIT_OPACITY = 0.1
KNN = 3


def init_from_pointcloud(points, colors=None, sh_degree: int = 0) -> GaussianScene:
    """One isotropic Gaussian per point, sized by the mean distance to its 3 nearest neighbours."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = len(points)
    if n == 0:
        raise InvalidParameterError("point cloud is empty")
    if colors is None:
        colors = np.full((n, 3), 0.5)
    colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
    if len(colors) != n:
        raise InvalidParameterError(f"{n} points but {len(colors)} colours")

    if n > 1:
        k = min(KNN, n - 1)
        dist, _ = cKDTree(points).query(points, k=k + 1)
        mean_dist = dist.reshape(n, -1)[:, 1:].mean(axis=1)
    else:
        mean_dist = np.ones(1)
    log_scale = np.log(np.maximum(mean_dist, 1e-7))

    sh = np.zeros((n, sh_count(sh_degree), 3))
    sh[:, 0] = rgb_to_sh0(colors)
    rot = np.zeros((n, 4))
    rot[:, 0] = 1.0
    return GaussianScene(
        points.copy(),
        rot,
        np.repeat(log_scale[:, None], 3, axis=1),
        np.full(n, logit(INIT_OPACITY)),
        sh,
        sh_degree,
    )


def init_sphere(count: int, radius: float = 1.0, seed: int = 0, sh_degree: int = 0) -> GaussianScene:
    """Gaussians uniformly placed in a ball, unit scale, no rotation, grey."""
    if count < 1:
        raise InvalidParameterError("count must be >= 1")
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((count, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = radius * rng.uniform(0.0, 1.0, count) ** (1.0 / 3.0)
    rot = np.zeros((count, 4))
    rot[:, 0] = 1.0
    return GaussianScene(
        d * r[:, None],
        rot,
        np.zeros((count, 3)),
        np.full(count, logit(INIT_OPACITY)),
        np.zeros((count, sh_count(sh_degree), 3)),
        sh_degree,
    )


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def for_scene(cls, scene: GaussianScene) -> "AdamState":
        params = scene.parameters()
        return cls(
            {k: np.zeros_like(params[k]) for k in PARAM_GROUPS},
            {k: np.zeros_like(params[k]) for k in PARAM_GROUPS},
        )

    def subset(self, index) -> "AdamState":
        return AdamState(
            {k: a[index] for k, a in self.m.items()},
            {k: a[index] for k, a in self.v.items()},
            self.step,
        )


def adam_step(
    scene: GaussianScene,
    grads: GradientSet,
    state: AdamState,
    groups: ParamGroupConfig | None = None,
) -> tuple[GaussianScene, AdamState]:
    """One bias-corrected Adam update at per-group learning rates.

    Returns new scene and state objects; inputs are left untouched.
    Quaternions are renormalised after the update.
    """
    groups = groups or ParamGroupConfig()
    b1, b2 = groups.betas
    out = scene.copy()
    params = out.parameters()
    g_all = grads.groups()
    t = state.step + 1
    m_new, v_new = {}, {}
    for name in PARAM_GROUPS:
        p, g = params[name], g_all[name]
        if g.shape != p.shape or state.m[name].shape != p.shape:
            raise InvalidParameterError(
                f"{name}: gradient {g.shape} / state {state.m[name].shape} vs parameter {p.shape}"
            )
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        p -= groups.lr(name) * m_hat / (np.sqrt(v_hat) + groups.eps)
        m_new[name], v_new[name] = m, v
    q = out.rotations
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    return out, AdamState(m_new, v_new, t)
