"""Image-space losses: colour MSE, sketch feature distance and SDS gradients.

Diffusion schedule shared with external noise providers: linear betas from
1e-4 to 0.02 over 1000 steps, alpha_bar_t = prod_{s<=t} (1 - beta_s), t in
[1, 1000]. Noise for a given seed is ``default_rng(seed).standard_normal``.
"""
from __future__ import annotations

import enum
import struct
import subprocess
from dataclasses import dataclass
from functools import lru_cache
from typing import Protocol

import numpy as np

from .errors import InvalidParameterError, PreconditionError, ProtocolError
from .images import LUMA, luma, resize_bilinear, resize_bilinear_backward

NUM_TIMESTEPS = 1000
BETAS = np.linspace(1e-4, 0.02, NUM_TIMESTEPS)
ALPHAS_CUMPROD = np.cumprod(1.0 - BETAS)
TRAIN_T_RANGE = (20, 980)
DEFAULT_SKETCH_WEIGHT = 0.1


class Term(str, enum.Enum):
    COLOR = "color"
    SKETCH = "sketch"
    SDS = "sds"


@dataclass
class LossReport:
    value: float
    d_image: np.ndarray
    term: Term


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise InvalidParameterError(f"image shapes differ: {a.shape} vs {b.shape}")
    return a, b


def color_loss(guide, content, pose_w: float, step: int, total_steps: int) -> LossReport:
    """Pose- and schedule-weighted squared error, averaged over pixels."""
    guide, content = _same_shape(guide, content)
    if total_steps <= 0 or not 0 <= step <= total_steps:
        raise InvalidParameterError(f"need 0 <= step <= total_steps, got {step}/{total_steps}")
    weight = pose_w * (step / total_steps)
    n_pix = int(np.prod(content.shape[:2])) if content.ndim >= 2 else content.size
    diff = content - guide
    value = weight * float(np.sum(diff * diff)) / n_pix
    return LossReport(value, (2.0 * weight / n_pix) * diff, Term.COLOR)


# --- sketch features -------------------------------------------------------


class FeatureEncoder(Protocol):
    def __call__(self, image: np.ndarray) -> np.ndarray: ...

    def backward(self, image: np.ndarray, d_features: np.ndarray) -> np.ndarray: ...


@lru_cache(maxsize=16)
def _sobel_ops(n: int):
    """(smooth, diff) n x n matrices for [1,2,1] and [-1,0,1] with replicated borders."""
    idx = np.arange(n)
    lo, hi = np.clip(idx - 1, 0, n - 1), np.clip(idx + 1, 0, n - 1)
    smooth = np.zeros((n, n))
    diff = np.zeros((n, n))
    np.add.at(smooth, (idx, lo), 1.0)
    np.add.at(smooth, (idx, idx), 2.0)
    np.add.at(smooth, (idx, hi), 1.0)
    np.add.at(diff, (idx, lo), -1.0)
    np.add.at(diff, (idx, hi), 1.0)
    return smooth, diff


def sobel(gray: np.ndarray):
    """Horizontal and vertical Sobel responses of a 2D array."""
    sh, dh = _sobel_ops(gray.shape[0])
    sw, dw = _sobel_ops(gray.shape[1])
    return sh @ gray @ dw.T, dh @ gray @ sw.T


def edge_sketch(image: np.ndarray, gain: float = 1.0) -> np.ndarray:
    """Dark-lines-on-white sketch from the Sobel edge magnitude of an image."""
    gx, gy = sobel(luma(image))
    lines = np.clip(gain * np.hypot(gx, gy), 0.0, 1.0)
    return np.repeat((1.0 - lines)[..., None], 3, axis=-1)


@lru_cache(maxsize=8)
def _pool_op(n: int):
    m = np.zeros((n // 2, n))
    m[np.arange(n // 2), 2 * np.arange(n // 2)] = 0.5
    m[np.arange(n // 2), 2 * np.arange(n // 2) + 1] = 0.5
    return m


class SobelPyramidEncoder:
    """Differentiable contour features: luma, Sobel magnitude, 3-level mean pyramid.

    Inputs are bilinearly resampled to a fixed 64x64 before encoding. Sobel
    responses are divided by 8 so the magnitude estimates the intensity
    change per pixel. Each level is scaled by 1/sqrt(3 * pixels in the level)
    so the squared feature norm is an average of the per-level mean squares.
    """

    native = 64
    levels = 3
    smooth_eps = 1e-3
    gradient_scale = 1.0 / 8.0

    def __init__(self):
        sizes = [self.native >> k for k in range(self.levels)]
        self.level_sizes = sizes
        self.level_scale = [1.0 / np.sqrt(self.levels * s * s) for s in sizes]
        self.feature_length = sum(s * s for s in sizes)

    def _forward(self, image):
        image = np.asarray(image, dtype=np.float64)
        gray = resize_bilinear(luma(image), self.native, self.native)
        gx, gy = sobel(gray)
        gx, gy = gx * self.gradient_scale, gy * self.gradient_scale
        mag = np.sqrt(gx * gx + gy * gy + self.smooth_eps**2) - self.smooth_eps
        pyramid = [mag]
        for _ in range(self.levels - 1):
            p = _pool_op(pyramid[-1].shape[0])
            pyramid.append(p @ pyramid[-1] @ p.T)
        return image, gx, gy, mag, pyramid

    def __call__(self, image) -> np.ndarray:
        *_, pyramid = self._forward(image)
        return np.concatenate([lvl.ravel() * s for lvl, s in zip(pyramid, self.level_scale)])

    def backward(self, image, d_features) -> np.ndarray:
        image, gx, gy, mag, pyramid = self._forward(image)
        d_features = np.asarray(d_features, dtype=np.float64)
        if d_features.shape != (self.feature_length,):
            raise InvalidParameterError(f"d_features must have length {self.feature_length}")
        chunks, start = [], 0
        for lvl in pyramid:
            chunks.append(d_features[start:start + lvl.size].reshape(lvl.shape))
            start += lvl.size
        d = chunks[-1] * self.level_scale[-1]
        for k in range(self.levels - 1, 0, -1):
            p = _pool_op(pyramid[k - 1].shape[0])
            d = p.T @ d @ p + chunks[k - 1] * self.level_scale[k - 1]
        denom = mag + self.smooth_eps
        d_gx, d_gy = d * gx / denom, d * gy / denom
        s, dm = _sobel_ops(self.native)
        d_gray = (s.T @ d_gx @ dm + dm.T @ d_gy @ s) * self.gradient_scale
        d_gray = resize_bilinear_backward(d_gray, image.shape[0], image.shape[1])
        if image.ndim == 3:
            return d_gray[..., None] * LUMA
        return d_gray


def builtin_encoder() -> SobelPyramidEncoder:
    return SobelPyramidEncoder()


def sketch_loss(
    encoder: FeatureEncoder, sketch, content, weight: float, sketch_features=None
) -> LossReport:
    """weight * ||enc(sketch) - enc(content)||^2, differentiated w.r.t. content.

    Pass `sketch_features` to reuse an already-encoded sketch.
    """
    content = np.asarray(content, dtype=np.float64)
    if weight == 0:
        return LossReport(0.0, np.zeros_like(content), Term.SKETCH)
    if sketch_features is None:
        sketch_features = encoder(sketch)
    diff = encoder(content) - sketch_features
    value = weight * float(diff @ diff)
    return LossReport(value, encoder.backward(content, 2.0 * weight * diff), Term.SKETCH)


def load_feature_file(path) -> np.ndarray:
    """Precomputed features from an external encoder (.npy), for evaluation only."""
    return np.load(path, allow_pickle=False).astype(np.float64).ravel()


def feature_distance(a, b) -> float:
    a, b = _same_shape(a, b)
    return float(np.sum((a - b) ** 2))


# --- score distillation ----------------------------------------------------


class NoiseProvider(Protocol):
    def __call__(self, noisy_image: np.ndarray, timestep: int, tag: str) -> np.ndarray: ...


def alpha_bar(timestep: int) -> float:
    if not 1 <= timestep <= NUM_TIMESTEPS:
        raise InvalidParameterError(f"timestep {timestep} outside [1, {NUM_TIMESTEPS}]")
    return float(ALPHAS_CUMPROD[timestep - 1])


def seeded_noise(seed: int, shape) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(shape)


def add_noise(image, timestep: int, noise) -> np.ndarray:
    ab = alpha_bar(timestep)
    return np.sqrt(ab) * image + np.sqrt(1.0 - ab) * noise


def sds_grad(provider: NoiseProvider, image, timestep: int, noise_seed: int, tag: str = "") -> np.ndarray:
    """Image-space SDS gradient (eps_hat - eps) with unit timestep weighting."""
    image = np.asarray(image, dtype=np.float64)
    eps = seeded_noise(noise_seed, image.shape)
    noisy = add_noise(image, timestep, eps)
    bind = getattr(provider, "bind_seed", None)
    if bind is not None:
        bind(noise_seed)
    pred = np.asarray(provider(noisy, timestep, tag), dtype=np.float64)
    if pred.shape != image.shape:
        raise ProtocolError(f"provider returned shape {pred.shape}, expected {image.shape}")
    return pred - eps


class MockNoiseProvider:
    """Test double that knows the noise seed and nudges x0 toward `target`.

    Returns eps_implied + k * (x0 - target); SDS descent with it is plain
    target matching with gain k.
    """

    def __init__(self, target, k: float = 1.0):
        self.target = np.asarray(target, dtype=np.float64)
        self.k = k
        self.seed = None

    def bind_seed(self, seed: int) -> None:
        self.seed = seed

    def __call__(self, noisy_image, timestep, tag=""):
        if self.seed is None:
            raise PreconditionError("mock provider used before a noise seed was bound")
        ab = alpha_bar(timestep)
        eps = seeded_noise(self.seed, noisy_image.shape)
        x0 = (noisy_image - np.sqrt(1.0 - ab) * eps) / np.sqrt(ab)
        implied = (noisy_image - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)
        return implied + self.k * (x0 - self.target)


def mock_noise_provider(target, k: float = 1.0) -> MockNoiseProvider:
    return MockNoiseProvider(target, k)


class EchoFreeMockProvider:
    """Mock without access to the noise: predicts k * (x_t / sqrt(alpha_bar) - target).

    Unbiased for k * (image - target) in expectation over the noise.
    """

    def __init__(self, target, k: float = 1.0):
        self.target = np.asarray(target, dtype=np.float64)
        self.k = k

    def __call__(self, noisy_image, timestep, tag=""):
        return self.k * (noisy_image / np.sqrt(alpha_bar(timestep)) - self.target)


class GuidanceTargetProvider:
    """Mock provider whose target follows the current view's guidance image.

    The training loop sets `target` before each call via `set_target`.
    """

    def __init__(self, k: float = 1.0):
        self.k = k
        self._mock = MockNoiseProvider(np.zeros(1), k)

    def set_target(self, target) -> None:
        self._mock.target = np.asarray(target, dtype=np.float64)

    def bind_seed(self, seed: int) -> None:
        self._mock.bind_seed(seed)

    def __call__(self, noisy_image, timestep, tag=""):
        return self._mock(noisy_image, timestep, tag)


# --- out-of-process wire format -------------------------------------------
# request:  <u4 height> <u4 width> <u4 timestep> <u4 tag_len> tag(utf-8) f4[h*w*3]
# response: <u4 height> <u4 width> f4[h*w*3]
# all little-endian, rasters row-major RGB

_REQ_HEAD = struct.Struct("<IIII")
_RESP_HEAD = struct.Struct("<II")


def encode_request(image, timestep: int, tag: str) -> bytes:
    img = np.asarray(image)
    h, w = img.shape[:2]
    tag_b = tag.encode("utf-8")
    return _REQ_HEAD.pack(h, w, timestep, len(tag_b)) + tag_b + img.astype("<f4").tobytes()


def _read_exact(stream, n: int) -> bytes:
    buf = b""
    while len(buf) < n:
        chunk = stream.read(n - len(buf))
        if not chunk:
            raise ProtocolError(f"stream ended after {len(buf)} of {n} bytes")
        buf += chunk
    return buf


def read_request(stream):
    """Decode one request frame; returns (image, timestep, tag) or None at EOF."""
    head = stream.read(_REQ_HEAD.size)
    if not head:
        return None
    if len(head) < _REQ_HEAD.size:
        head += _read_exact(stream, _REQ_HEAD.size - len(head))
    h, w, t, n = _REQ_HEAD.unpack(head)
    tag = _read_exact(stream, n).decode("utf-8")
    raster = np.frombuffer(_read_exact(stream, h * w * 12), dtype="<f4").reshape(h, w, 3)
    return raster.astype(np.float64), t, tag


def encode_response(image) -> bytes:
    img = np.asarray(image)
    return _RESP_HEAD.pack(*img.shape[:2]) + img.astype("<f4").tobytes()


def read_response(stream) -> np.ndarray:
    h, w = _RESP_HEAD.unpack(_read_exact(stream, _RESP_HEAD.size))
    raster = np.frombuffer(_read_exact(stream, h * w * 12), dtype="<f4").reshape(h, w, 3)
    return raster.astype(np.float64)


def serve(provider: NoiseProvider, stdin, stdout) -> None:
    """Answer request frames from `stdin` until EOF; for writing provider processes."""
    while (req := read_request(stdin)) is not None:
        image, t, tag = req
        stdout.write(encode_response(provider(image, t, tag)))
        stdout.flush()


class CommandNoiseProvider:
    """Noise provider running in a child process speaking the wire format over stdio."""

    def __init__(self, argv):
        self.argv = list(argv)
        self._proc = None

    def _ensure(self):
        if self._proc is None or self._proc.poll() is not None:
            self._proc = subprocess.Popen(self.argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE)
        return self._proc

    def __call__(self, noisy_image, timestep, tag=""):
        proc = self._ensure()
        proc.stdin.write(encode_request(noisy_image, timestep, tag))
        proc.stdin.flush()
        out = read_response(proc.stdout)
        if out.shape != np.shape(noisy_image):
            raise ProtocolError(f"provider returned shape {out.shape}")
        return out

    def close(self):
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.wait(timeout=10)
            self._proc = None
