"""Guidance images: distribution transfer, directory protocol, synthetic oracle.

Directory protocol: one 8-bit RGB PNG per schedule pose, named
``h_AAA.png`` / ``v_AAA.png`` with AAA the zero-padded angle in degrees.
Any resolution is accepted; images are bilinearly resampled on load.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .camera import CameraIntrinsics, OrbitPose, orbit_to_extrinsics
from .errors import InvalidParameterError, MissingEntryError
from .gaussians import GaussianScene
from .images import read_image, resize_bilinear, write_image
from .render import RenderConfig, render

TRANSFER_EPS = 1e-6
REFRESH_INTERVAL = 30


@dataclass
class GuidanceSet:
    entries: dict[OrbitPose, np.ndarray]
    generation_step: int = 0
    resolution: tuple[int, int] = field(init=False)

    def __post_init__(self):
        shapes = {img.shape for img in self.entries.values()}
        if len(shapes) > 1:
            raise InvalidParameterError(f"guidance images differ in shape: {sorted(shapes)}")
        self.resolution = shapes.pop()[:2] if shapes else (0, 0)

    def __getitem__(self, pose: OrbitPose) -> np.ndarray:
        return self.entries[pose]

    def __len__(self):
        return len(self.entries)


def _check_pair(content, guide):
    content = np.asarray(content, dtype=np.float64)
    guide = np.asarray(guide, dtype=np.float64)
    if content.shape != guide.shape:
        raise InvalidParameterError(
            f"content {content.shape} and guide {guide.shape} differ in shape"
        )
    return content, guide


def _channel_stats(img):
    axes = tuple(range(img.ndim - 1)) if img.ndim > 1 else (0,)
    mu = img.mean(axis=axes, keepdims=True)
    sigma = img.std(axis=axes, keepdims=True)
    return mu, sigma, axes


def distribution_transfer(content, guide, clamp: bool = True) -> np.ndarray:
    """Re-standardise each channel of `content` to the guide's mean and std."""
    content, guide = _check_pair(content, guide)
    mu_c, sd_c, _ = _channel_stats(content)
    mu_g, sd_g, _ = _channel_stats(guide)
    out = sd_g * (content - mu_c) / np.maximum(sd_c, TRANSFER_EPS) + mu_g
    return np.clip(out, 0.0, 1.0) if clamp else out


def distribution_transfer_backward(content, guide, d_output, clamp: bool = True) -> np.ndarray:
    """Gradient of the transfer w.r.t. `content`, including the statistics' dependence."""
    content, guide = _check_pair(content, guide)
    d_output = np.asarray(d_output, dtype=np.float64)
    if d_output.shape != content.shape:
        raise InvalidParameterError("d_output must match the image shape")
    mu_c, sd_c, axes = _channel_stats(content)
    mu_g, sd_g, _ = _channel_stats(guide)
    s = np.maximum(sd_c, TRANSFER_EPS)
    u = (content - mu_c) / s
    g = d_output
    if clamp:
        pre = sd_g * u + mu_g
        g = np.where((pre >= 0.0) & (pre <= 1.0), g, 0.0)
    g_u = sd_g * g
    centred = g_u - g_u.mean(axis=axes, keepdims=True)
    # std only depends on the content where it is above the guard
    live = sd_c > TRANSFER_EPS
    through_std = u * (g_u * u).mean(axis=axes, keepdims=True)
    return (centred - np.where(live, through_std, 0.0)) / s


def guidance_filename(pose: OrbitPose) -> str:
    return f"{pose.name}.png"


def save_guidance(guidance: GuidanceSet, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for pose, img in guidance.entries.items():
        write_image(img, directory / guidance_filename(pose))


def load_guidance(directory, intrinsics: CameraIntrinsics, schedule, step: int = 0) -> GuidanceSet:
    directory = Path(directory)
    missing = [guidance_filename(p) for p in schedule if not (directory / guidance_filename(p)).is_file()]
    if missing:
        raise MissingEntryError(
            f"guidance directory {directory} is missing {', '.join(missing)}"
        )
    entries = {}
    for pose in schedule:
        img = read_image(directory / guidance_filename(pose))
        entries[pose] = resize_bilinear(img, intrinsics.height, intrinsics.width)
    return GuidanceSet(entries, step)


def synthetic_guidance(
    truth: GaussianScene,
    schedule,
    intrinsics: CameraIntrinsics,
    config: RenderConfig | None = None,
    step: int = 0,
) -> GuidanceSet:
    config = config or RenderConfig()
    return GuidanceSet(
        {p: render(truth, orbit_to_extrinsics(p), intrinsics, config).rgb for p in schedule},
        step,
    )


class DirectoryGuidance:
    """Provider that re-reads a guidance directory on every refresh.

    An external generator may rewrite the files between refreshes.
    """

    def __init__(self, directory, intrinsics: CameraIntrinsics, schedule):
        self.directory = Path(directory)
        self.intrinsics = intrinsics
        self.schedule = list(schedule)

    def __call__(self, step: int, scene: GaussianScene) -> GuidanceSet:
        return load_guidance(self.directory, self.intrinsics, self.schedule, step)


class SyntheticGuidance:
    """Provider that renders a known ground-truth scene at every pose."""

    def __init__(self, truth: GaussianScene, intrinsics: CameraIntrinsics, schedule, config=None):
        self.truth = truth
        self.intrinsics = intrinsics
        self.schedule = list(schedule)
        self.config = config or RenderConfig()

    def __call__(self, step: int, scene: GaussianScene) -> GuidanceSet:
        return synthetic_guidance(self.truth, self.schedule, self.intrinsics, self.config, step)
