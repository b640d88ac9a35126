"""8-bit image files <-> float arrays in [0, 1] (bytes / 255, no gamma)."""

from __future__ import annotations

import os

import numpy as np
from PIL import Image

from .errors import DataError


def read_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as e:
        raise DataError(f"{path}: cannot read image ({e})") from e
    return arr / 255.0


def to_bytes(img) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_image(img, path) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] not in (1, 3):
        raise ValueError(f"expected an HxWx3 image, got shape {img.shape}")
    d = os.path.dirname(os.fspath(path))
    if d:
        os.makedirs(d, exist_ok=True)
    data = to_bytes(img)
    if data.shape[2] == 1:
        data = data[..., 0]
    try:
        Image.fromarray(data).save(path)
    except (OSError, ValueError, KeyError) as e:
        raise DataError(f"{path}: cannot write image ({e})") from e


def read_mask(path) -> np.ndarray:
    """Single-channel mask; values above 127 are true."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("L")) > 127
    except (OSError, ValueError) as e:
        raise DataError(f"{path}: cannot read mask ({e})") from e


def write_mask(mask, path) -> None:
    d = os.path.dirname(os.fspath(path))
    if d:
        os.makedirs(d, exist_ok=True)
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def read_normal_map(path):
    """Camera-space unit normals from an RGB encoding of ``(n + 1) / 2``.

    Returns ``(normals, valid)``; black pixels (and anything that decodes to
    a near-zero vector) are invalid.
    """
    n = read_image(path) * 2.0 - 1.0
    norm = np.linalg.norm(n, axis=-1)
    valid = norm > 0.5
    out = np.zeros_like(n)
    out[valid] = n[valid] / norm[valid, None]
    return out, valid


def write_normal_map(normals, path) -> None:
    write_image((np.asarray(normals) + 1.0) / 2.0, path)


def normal_path_for(image_path) -> str:
    root, ext = os.path.splitext(os.fspath(image_path))
    return f"{root}_normal{ext or '.png'}"
