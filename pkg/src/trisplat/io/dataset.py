"""Posed image collections and the native JSON scene manifest.

Manifest layout (paths relative to the manifest file)::

    {
      "format": "trisplat-manifest", "version": 1,
      "frames": [
        {"name": "view_000", "image": "images/view_000.png",
         "camera": {"fx": .., "fy": .., "cx": .., "cy": ..,
                    "R": [[..], [..], [..]], "t": [..], "width": .., "height": ..},
         "normal": "images/view_000_normal.png"}          # optional
      ],
      "points": [[x, y, z], ...],  "colors": [[r, g, b], ...],   # colors in [0, 1], optional
      "split": {"train": [..], "test": [..]},                      # optional
      "background": [0, 0, 0],                                     # optional
      "extras": {...}                                              # free-form, optional
    }

``R`` and ``t`` map world to camera coordinates (x right, y down, z forward).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from ..scene import Camera
from .errors import DataError
from .images import normal_path_for, read_image, read_normal_map

MANIFEST_FORMAT = "trisplat-manifest"
MANIFEST_VERSION = 1


@dataclass
class SceneDataset:
    cameras: list
    image_paths: list
    names: list
    points: np.ndarray
    colors: np.ndarray | None = None
    train_ids: list = field(default_factory=list)
    test_ids: list = field(default_factory=list)
    normal_paths: list | None = None
    background: tuple = (0.0, 0.0, 0.0)
    extras: dict = field(default_factory=dict)
    root: str = "."
    images: list | None = None
    normals: list | None = None

    def __len__(self):
        return len(self.cameras)

    def load_images(self):
        """Read every image (and normal prior) and check sizes against the cameras."""
        imgs = []
        for cam, p in zip(self.cameras, self.image_paths):
            if not os.path.isfile(p):
                raise DataError(f"{p}: image file missing")
            img = read_image(p)
            if img.shape[:2] != (cam.height, cam.width):
                raise DataError(f"{p}: image is {img.shape[1]}x{img.shape[0]} but its camera is "
                                f"{cam.width}x{cam.height}")
            imgs.append(img)
        self.images = imgs
        paths = self.normal_paths
        if paths is None:
            paths = [normal_path_for(p) for p in self.image_paths]
            paths = [p if os.path.isfile(p) else None for p in paths]
        normals = []
        for cam, p in zip(self.cameras, paths):
            if p is None:
                normals.append(None)
                continue
            n_cam, valid = read_normal_map(p)
            if n_cam.shape[:2] != (cam.height, cam.width):
                raise DataError(f"{p}: normal map size does not match its camera")
            normals.append((n_cam @ cam.rotation, valid))  # camera -> world: R^T n
        self.normals = normals
        return self

    def split(self, which: str) -> list:
        if which == "train":
            return list(self.train_ids)
        if which == "test":
            return list(self.test_ids)
        if which == "all":
            return list(range(len(self)))
        raise ValueError(f"unknown split {which!r} (train, test, all)")


def load_manifest(path, load_images: bool = True) -> SceneDataset:
    try:
        with open(path, encoding="utf-8") as f:
            m = json.load(f)
    except OSError as e:
        raise DataError(f"{path}: cannot read manifest ({e})") from e
    except json.JSONDecodeError as e:
        raise DataError(f"{path}:{e.lineno}: invalid JSON ({e.msg})") from e
    if m.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}: not a scene manifest (format={m.get('format')!r})")
    if m.get("version") != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {m.get('version')}")
    root = os.path.dirname(os.path.abspath(path))
    frames = m.get("frames") or []
    if not frames:
        raise DataError(f"{path}: manifest lists no frames")
    cams, paths, names, npaths = [], [], [], []
    for i, fr in enumerate(frames):
        try:
            cams.append(Camera.from_dict(fr["camera"]))
            paths.append(os.path.join(root, fr["image"]))
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"{path}: frame {i} is malformed ({e})") from e
        names.append(fr.get("name", os.path.splitext(os.path.basename(fr["image"]))[0]))
        npaths.append(os.path.join(root, fr["normal"]) if fr.get("normal") else None)
    pts = np.asarray(m.get("points", []), dtype=np.float64).reshape(-1, 3)
    cols = m.get("colors")
    cols = None if cols is None else np.asarray(cols, dtype=np.float64).reshape(-1, 3)
    if cols is not None and len(cols) != len(pts):
        raise DataError(f"{path}: {len(cols)} colors for {len(pts)} points")
    split = m.get("split") or {}
    train = split.get("train", list(range(len(frames))))
    test = split.get("test", [])
    for j in list(train) + list(test):
        if not 0 <= j < len(frames):
            raise DataError(f"{path}: split index {j} out of range")
    ds = SceneDataset(cams, paths, names, pts, cols, list(train), list(test), npaths,
                      tuple(m.get("background", (0.0, 0.0, 0.0))), m.get("extras", {}), root)
    if load_images:
        ds.load_images()
    return ds


def write_manifest(path, cameras, image_files, names, points, colors=None, train=None, test=None,
                   normal_files=None, background=(0.0, 0.0, 0.0), extras=None) -> None:
    frames = []
    for i, (cam, img, name) in enumerate(zip(cameras, image_files, names)):
        fr = {"name": name, "image": img, "camera": cam.to_dict()}
        if normal_files and normal_files[i]:
            fr["normal"] = normal_files[i]
        frames.append(fr)
    m = {"format": MANIFEST_FORMAT, "version": MANIFEST_VERSION, "frames": frames,
         "points": np.asarray(points).tolist()}
    if colors is not None:
        m["colors"] = np.asarray(colors).tolist()
    m["split"] = {"train": list(range(len(frames))) if train is None else [int(i) for i in train],
                  "test": [] if test is None else [int(i) for i in test]}
    m["background"] = [float(b) for b in background]
    if extras:
        m["extras"] = extras
    with open(path, "w", encoding="utf-8") as f:
        json.dump(m, f, indent=1)
        f.write("\n")


def load_dataset(path, load_images: bool = True) -> SceneDataset:
    """Manifest file, directory holding ``manifest.json``, or a COLMAP text model."""
    from .colmap import parse_colmap_text

    if not os.path.exists(path):
        raise DataError(f"{path}: no such file or directory")
    if os.path.isfile(path):
        return load_manifest(path, load_images)
    cand = os.path.join(path, "manifest.json")
    if os.path.isfile(cand):
        return load_manifest(cand, load_images)
    return parse_colmap_text(path, load_images=load_images)
