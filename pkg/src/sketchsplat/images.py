"""PNG codec and small differentiable image helpers."""
from __future__ import annotations

from functools import lru_cache
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import FormatError

LUMA = np.array([0.299, 0.587, 0.114])


def to_bytes(image: np.ndarray) -> np.ndarray:
    """Quantise [0,1] floats to uint8 with round-half-up."""
    v = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def write_image(image: np.ndarray, path) -> None:
    img = np.asarray(image)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=-1)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise FormatError(f"expected an H x W x 3 image, got shape {img.shape}")
    Image.fromarray(to_bytes(img), mode="RGB").save(Path(path), format="PNG")


def read_image(path) -> np.ndarray:
    """Read an 8-bit PNG as float64 RGB in [0, 1]."""
    path = Path(path)
    try:
        with Image.open(path) as im:
            if im.format != "PNG":
                raise FormatError(f"{path}: expected PNG, found {im.format}")
            data = np.asarray(im.convert("RGB"), dtype=np.float64)
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: cannot decode image") from exc
    return data / 255.0


@lru_cache(maxsize=64)
def _resize_matrix(n_out: int, n_in: int) -> np.ndarray:
    """Linear interpolation weights with half-pixel centres and clamped edges."""
    m = np.zeros((n_out, n_in))
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0.0, n_in - 1)
    lo = np.floor(src).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = src - lo
    rows = np.arange(n_out)
    np.add.at(m, (rows, lo), 1.0 - frac)
    np.add.at(m, (rows, hi), frac)
    m.setflags(write=False)
    return m


def resize_bilinear(image: np.ndarray, height: int, width: int) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.shape[:2] == (height, width):
        return image.copy()
    ry = _resize_matrix(height, image.shape[0])
    rx = _resize_matrix(width, image.shape[1])
    return np.einsum("ij,jk...,lk->il...", ry, image, rx)


def resize_bilinear_backward(d_out: np.ndarray, in_height: int, in_width: int) -> np.ndarray:
    d_out = np.asarray(d_out, dtype=np.float64)
    if d_out.shape[:2] == (in_height, in_width):
        return d_out.copy()
    ry = _resize_matrix(d_out.shape[0], in_height)
    rx = _resize_matrix(d_out.shape[1], in_width)
    return np.einsum("ij,il...,lk->jk...", ry, d_out, rx)


def luma(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return image @ LUMA if image.ndim == 3 else image
