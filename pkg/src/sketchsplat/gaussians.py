"""Gaussian scene representation, activations, covariance and SH colour."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidParameterError

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

QUAT_TOL = 1e-6


def sh_count(degree: int) -> int:
    return (degree + 1) ** 2


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def logit(p):
    p = np.asarray(p, dtype=np.float64)
    return np.log(p) - np.log1p(-p)


@dataclass
class GaussianScene:
    """An optimisable set of anisotropic 3D Gaussians.

    Parameters live in unconstrained domains: scales as logs, opacities as
    logits. Rotations are (w, x, y, z) quaternions kept at unit norm by the
    optimiser.
    """

    positions: np.ndarray  # (N, 3)
    rotations: np.ndarray  # (N, 4) wxyz
    log_scales: np.ndarray  # (N, 3)
    opacity_logits: np.ndarray  # (N,)
    sh_coeffs: np.ndarray  # (N, (deg+1)^2, 3)
    sh_degree: int = 0

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.rotations = np.asarray(self.rotations, dtype=np.float64).reshape(n, 4)
        self.log_scales = np.asarray(self.log_scales, dtype=np.float64).reshape(n, 3)
        self.opacity_logits = np.asarray(self.opacity_logits, dtype=np.float64).reshape(n)
        if not 0 <= self.sh_degree <= 3:
            raise InvalidParameterError(f"sh_degree must be in [0, 3], got {self.sh_degree}")
        k = sh_count(self.sh_degree)
        self.sh_coeffs = np.asarray(self.sh_coeffs, dtype=np.float64)
        if self.sh_coeffs.shape != (n, k, 3):
            raise InvalidParameterError(
                f"sh_coeffs must have shape {(n, k, 3)}, got {self.sh_coeffs.shape}"
            )

    @property
    def count(self) -> int:
        return len(self.positions)

    @property
    def opacities(self) -> np.ndarray:
        return sigmoid(self.opacity_logits)

    @property
    def scales(self) -> np.ndarray:
        return np.exp(self.log_scales)

    @classmethod
    def empty(cls, sh_degree: int = 0) -> "GaussianScene":
        return cls(
            np.zeros((0, 3)),
            np.zeros((0, 4)),
            np.zeros((0, 3)),
            np.zeros(0),
            np.zeros((0, sh_count(sh_degree), 3)),
            sh_degree,
        )

    def copy(self) -> "GaussianScene":
        return GaussianScene(
            self.positions.copy(),
            self.rotations.copy(),
            self.log_scales.copy(),
            self.opacity_logits.copy(),
            self.sh_coeffs.copy(),
            self.sh_degree,
        )

    def subset(self, index) -> "GaussianScene":
        return GaussianScene(
            self.positions[index],
            self.rotations[index],
            self.log_scales[index],
            self.opacity_logits[index],
            self.sh_coeffs[index],
            self.sh_degree,
        )

    def parameters(self) -> dict[str, np.ndarray]:
        """Named views of the five parameter groups (not copies)."""
        return {
            "position": self.positions,
            "rotation": self.rotations,
            "log_scale": self.log_scales,
            "opacity_logit": self.opacity_logits,
            "sh": self.sh_coeffs,
        }

    def equals(self, other: "GaussianScene") -> bool:
        return self.sh_degree == other.sh_degree and all(
            np.array_equal(a, b)
            for a, b in zip(self.parameters().values(), other.parameters().values())
        )


PARAM_GROUPS = ("position", "rotation", "log_scale", "opacity_logit", "sh")


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for (..., 4) wxyz quaternions, which are normalised first."""
    q = np.asarray(q, dtype=np.float64)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    w, x, y, z = np.moveaxis(q, -1, 0)
    return np.stack(
        [
            np.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1),
            np.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1),
            np.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1),
        ],
        -2,
    )


def rotmat_grad_to_quat(q: np.ndarray, d_rot: np.ndarray) -> np.ndarray:
    """Pull dL/dR back to the raw (unnormalised) quaternion.

    Includes the Jacobian of q -> q/|q|, so the result is tangent to the
    unit sphere at q.
    """
    q = np.asarray(q, dtype=np.float64)
    norm = np.linalg.norm(q, axis=-1, keepdims=True)
    qn = q / norm
    w, x, y, z = np.moveaxis(qn, -1, 0)
    g = d_rot
    dw = 2 * (
        -z * g[..., 0, 1] + y * g[..., 0, 2] + z * g[..., 1, 0]
        - x * g[..., 1, 2] - y * g[..., 2, 0] + x * g[..., 2, 1]
    )
    dx = 2 * (
        y * g[..., 0, 1] + z * g[..., 0, 2] + y * g[..., 1, 0] - 2 * x * g[..., 1, 1]
        - w * g[..., 1, 2] + z * g[..., 2, 0] + w * g[..., 2, 1] - 2 * x * g[..., 2, 2]
    )
    dy = 2 * (
        -2 * y * g[..., 0, 0] + x * g[..., 0, 1] + w * g[..., 0, 2] + x * g[..., 1, 0]
        + z * g[..., 1, 2] - w * g[..., 2, 0] + z * g[..., 2, 1] - 2 * y * g[..., 2, 2]
    )
    dz = 2 * (
        -2 * z * g[..., 0, 0] - w * g[..., 0, 1] + x * g[..., 0, 2] + w * g[..., 1, 0]
        - 2 * z * g[..., 1, 1] + y * g[..., 1, 2] + x * g[..., 2, 0] + y * g[..., 2, 1]
    )
    d_qn = np.stack([dw, dx, dy, dz], -1)
    radial = np.sum(d_qn * qn, axis=-1, keepdims=True)
    return (d_qn - radial * qn) / norm


def quat_multiply(a, b):
    """Hamilton product a*b of wxyz quaternions."""
    aw, ax, ay, az = np.moveaxis(np.asarray(a, dtype=np.float64), -1, 0)
    bw, bx, by, bz = np.moveaxis(np.asarray(b, dtype=np.float64), -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        -1,
    )


def covariances(rotations: np.ndarray, scales: np.ndarray) -> np.ndarray:
    """Batched R S S^T R^T without validation."""
    r = quat_to_rotmat(rotations)
    m = r * scales[..., None, :]
    return m @ np.swapaxes(m, -1, -2)


def covariance_from(rotation, scale) -> np.ndarray:
    """3x3 covariance of an ellipsoid with the given orientation and axis lengths."""
    q = np.asarray(rotation, dtype=np.float64)
    s = np.asarray(scale, dtype=np.float64)
    if q.shape != (4,) or s.shape != (3,):
        raise InvalidParameterError("expected a 4-vector quaternion and a 3-vector scale")
    if abs(np.linalg.norm(q) - 1.0) > QUAT_TOL:
        raise InvalidParameterError(f"quaternion norm {np.linalg.norm(q)!r} is not 1")
    if np.any(s <= 0):
        raise InvalidParameterError("scale components must be positive")
    cov = covariances(q, s)
    return 0.5 * (cov + cov.T)


def sh_basis(dirs: np.ndarray, degree: int) -> np.ndarray:
    """Real SH basis values, shape (..., (degree+1)^2), for unit directions (..., 3)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
    out = [np.full(x.shape, SH_C0)]
    if degree >= 1:
        out += [-SH_C1 * y, SH_C1 * z, -SH_C1 * x]
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        out += [
            SH_C2[0] * x * y,
            SH_C2[1] * y * z,
            SH_C2[2] * (2 * zz - xx - yy),
            SH_C2[3] * x * z,
            SH_C2[4] * (xx - yy),
        ]
    if degree >= 3:
        out += [
            SH_C3[0] * y * (3 * xx - yy),
            SH_C3[1] * x * y * z,
            SH_C3[2] * y * (4 * zz - xx - yy),
            SH_C3[3] * z * (2 * zz - 3 * xx - 3 * yy),
            SH_C3[4] * x * (4 * zz - xx - yy),
            SH_C3[5] * z * (xx - yy),
            SH_C3[6] * x * (xx - 3 * yy),
        ]
    return np.stack(out, -1)


def sh_eval(coeffs, view_dir, degree: int) -> np.ndarray:
    """RGB colour clamp(0.5 + sum_lm Y_lm(dir) c_lm, 0, 1)."""
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(-1, 3)
    if not 0 <= degree <= 3:
        raise InvalidParameterError(f"SH degree must be in [0, 3], got {degree}")
    k = sh_count(degree)
    if len(coeffs) < k:
        raise InvalidParameterError(f"degree {degree} needs {k} coefficients, got {len(coeffs)}")
    basis = sh_basis(np.asarray(view_dir, dtype=np.float64), degree)
    return np.clip(0.5 + basis @ coeffs[:k], 0.0, 1.0)


def rgb_to_sh0(rgb) -> np.ndarray:
    """Degree-0 coefficient reproducing `rgb` under the 0.5-offset convention."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def prune(scene: GaussianScene, opacity_threshold: float) -> GaussianScene:
    keep = scene.opacities >= opacity_threshold
    return scene.subset(np.flatnonzero(keep))


def random_scene(
    count: int,
    seed: int,
    *,
    radius: float = 0.7,
    scale_range: tuple[float, float] = (0.08, 0.35),
    sh_degree: int = 0,
) -> GaussianScene:
    """Seeded random scene, used for test fixtures and gradient checks."""
    rng = np.random.default_rng(seed)
    pos = rng.uniform(-1, 1, (count, 3))
    pos *= radius * rng.uniform(0, 1, (count, 1)) ** (1 / 3) / np.maximum(
        np.linalg.norm(pos, axis=1, keepdims=True), 1e-12
    )
    q = rng.normal(size=(count, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    lo, hi = np.log(scale_range[0]), np.log(scale_range[1])
    log_scales = rng.uniform(lo, hi, (count, 3))
    opacity = rng.normal(0.5, 1.2, count)
    sh = np.zeros((count, sh_count(sh_degree), 3))
    sh[:, 0] = rng.uniform(-1.6, 1.6, (count, 3))
    if sh_degree > 0:
        sh[:, 1:] = rng.normal(0, 0.2, (count, sh_count(sh_degree) - 1, 3))
    return GaussianScene(pos, q, log_scales, opacity, sh, sh_degree)
