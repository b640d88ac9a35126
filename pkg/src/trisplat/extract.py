"""Mask-driven object extraction from the per-pixel winner buffer.

In the opaque regime every pixel is explained by one triangle, so the
triangles that make up an object are the winners at its mask pixels,
gathered over all masked views.
"""

from __future__ import annotations

import numpy as np

from .raster import render
from .scene import Scene

MODES = ("extract", "remove")


def collect_triangles(scene: Scene, cameras, masks, min_views: int = 1, sigma=1e-4, floor=None) -> np.ndarray:
    """Sorted ids of triangles winning a mask-true pixel in at least ``min_views`` views.

    ``masks`` entries may be ``None`` to skip a view. ``floor=None`` keeps the
    scene's floor; the caller is expected to pass a converged (opaque) scene.
    """
    if len(cameras) != len(masks):
        raise ValueError(f"{len(masks)} masks for {len(cameras)} cameras")
    counts = np.zeros(len(scene.triangles), dtype=np.int64)
    for i, (cam, mask) in enumerate(zip(cameras, masks)):
        if mask is None:
            continue
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (cam.height, cam.width):
            raise ValueError(f"mask {i} is {mask.shape[1]}x{mask.shape[0]}, camera is {cam.width}x{cam.height}")
        if not mask.any():
            continue
        out = render(scene, cam, sigma=sigma, floor=floor)
        ids = out.winner_id[mask]
        ids = np.unique(ids[ids >= 0])
        counts[ids] += 1
    return np.flatnonzero(counts >= max(1, min_views))


def split_scene(scene: Scene, ids, mode: str = "extract") -> Scene:
    """Compacted copy keeping ``ids`` (extract) or everything else (remove)."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r} (extract, remove)")
    ids = np.asarray(list(ids), dtype=np.int64)
    if len(ids) and (ids.min() < 0 or ids.max() >= len(scene.triangles)):
        raise ValueError("triangle id out of range")
    sel = np.zeros(len(scene.triangles), dtype=bool)
    sel[ids] = True
    if mode == "remove":
        sel = ~sel
    sel &= scene.triangles.active
    return scene.subset(np.flatnonzero(sel))
