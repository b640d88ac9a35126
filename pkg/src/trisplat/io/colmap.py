"""Reader for COLMAP sparse models in the text format.

Only the pinhole camera models are supported (SIMPLE_PINHOLE, PINHOLE);
distorted models must be undistorted upstream.
"""

from __future__ import annotations

import os
import re

import numpy as np

from ..scene import Camera
from .errors import DataError, FormatError

SUPPORTED_MODELS = ("SIMPLE_PINHOLE", "PINHOLE")
_N_PARAMS = {"SIMPLE_PINHOLE": 3, "PINHOLE": 4}


def qvec2rotmat(qvec) -> np.ndarray:
    """Unit quaternion (w, x, y, z) to rotation matrix."""
    q = np.asarray(qvec, dtype=np.float64)
    q = q / np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * y * y - 2 * z * z, 2 * x * y - 2 * w * z, 2 * z * x + 2 * w * y],
        [2 * x * y + 2 * w * z, 1 - 2 * x * x - 2 * z * z, 2 * y * z - 2 * w * x],
        [2 * z * x - 2 * w * y, 2 * y * z + 2 * w * x, 1 - 2 * x * x - 2 * y * y]])


def _lines(path):
    try:
        with open(path, encoding="utf-8") as f:
            return f.read().splitlines()
    except OSError as e:
        raise DataError(f"{path}: cannot read ({e})") from e


def _header_count(lines, pattern):
    for line in lines:
        if not line.startswith("#"):
            break
        m = re.search(pattern, line)
        if m:
            return int(m.group(1))
    return None


def _floats(path, lineno, tokens, what):
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise FormatError(path, lineno, f"expected numbers for {what}") from None


def read_cameras_text(path) -> dict:
    """camera_id -> dict(model, width, height, fx, fy, cx, cy)."""
    lines = _lines(path)
    cams = {}
    for no, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if len(tok) < 4:
            raise FormatError(path, no, "expected CAMERA_ID MODEL WIDTH HEIGHT PARAMS[]")
        model = tok[1]
        if model not in SUPPORTED_MODELS:
            raise FormatError(path, no, f"unsupported camera model {model!r} "
                                        f"(supported: {', '.join(SUPPORTED_MODELS)})")
        if len(tok) != 4 + _N_PARAMS[model]:
            raise FormatError(path, no, f"{model} takes {_N_PARAMS[model]} parameters, got {len(tok) - 4}")
        try:
            cid, w, h = int(tok[0]), int(tok[2]), int(tok[3])
        except ValueError:
            raise FormatError(path, no, "camera id, width and height must be integers") from None
        p = _floats(path, no, tok[4:], "camera parameters")
        if model == "SIMPLE_PINHOLE":
            fx = fy = p[0]
            cx, cy = p[1], p[2]
        else:
            fx, fy, cx, cy = p
        cams[cid] = dict(model=model, width=w, height=h, fx=fx, fy=fy, cx=cx, cy=cy)
    n = _header_count(lines, r"Number of cameras:\s*(\d+)")
    if n is not None and n != len(cams):
        raise FormatError(path, None, f"header declares {n} cameras, found {len(cams)}")
    return cams


def read_images_text(path) -> list:
    """List of dict(image_id, qvec, tvec, camera_id, name), in file order."""
    lines = _lines(path)
    out = []
    i = 0
    while i < len(lines):
        line = lines[i].strip()
        no = i + 1
        i += 1
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if len(tok) < 10:
            raise FormatError(path, no, "expected IMAGE_ID QW QX QY QZ TX TY TZ CAMERA_ID NAME")
        vals = _floats(path, no, tok[1:8], "pose")
        try:
            iid, cid = int(tok[0]), int(tok[8])
        except ValueError:
            raise FormatError(path, no, "image and camera ids must be integers") from None
        out.append(dict(image_id=iid, qvec=np.array(vals[:4]), tvec=np.array(vals[4:7]),
                        camera_id=cid, name=" ".join(tok[9:])))
        # the next line holds the 2D observations (possibly empty)
        if i < len(lines) and not lines[i].startswith("#"):
            obs = lines[i].split()
            if len(obs) % 3:
                raise FormatError(path, i + 1, "POINTS2D line must hold (X, Y, POINT3D_ID) triples")
            i += 1
    n = _header_count(lines, r"Number of images:\s*(\d+)")
    if n is not None and n != len(out):
        raise FormatError(path, None, f"header declares {n} images, found {len(out)}")
    return out


def read_points3d_text(path):
    """(xyz P x 3, rgb P x 3 in [0, 1])."""
    lines = _lines(path)
    xyz, rgb = [], []
    for no, line in enumerate(lines, 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        if len(tok) < 8:
            raise FormatError(path, no, "expected POINT3D_ID X Y Z R G B ERROR TRACK[]")
        v = _floats(path, no, tok[1:7], "point")
        xyz.append(v[:3])
        rgb.append(v[3:6])
    n = _header_count(lines, r"Number of points:\s*(\d+)")
    if n is not None and n != len(xyz):
        raise FormatError(path, None, f"header declares {n} points, found {len(xyz)}")
    return np.array(xyz, dtype=np.float64).reshape(-1, 3), np.array(rgb, dtype=np.float64).reshape(-1, 3) / 255.0


def find_sparse_dir(root) -> str:
    for cand in (root, os.path.join(root, "sparse", "0"), os.path.join(root, "sparse")):
        if os.path.isfile(os.path.join(cand, "cameras.txt")):
            return cand
    raise DataError(f"{root}: no cameras.txt found (looked in ., sparse/0, sparse)")


def parse_colmap_text(root, image_dir=None, load_images: bool = True, test_every: int = 8):
    """Load a COLMAP text model as a :class:`SceneDataset`.

    Images are looked up in ``image_dir`` (default ``<root>/images``). Every
    ``test_every``-th image (sorted by name) is held out.
    """
    from .dataset import SceneDataset

    sparse = find_sparse_dir(root)
    cams = read_cameras_text(os.path.join(sparse, "cameras.txt"))
    imgs = read_images_text(os.path.join(sparse, "images.txt"))
    pts_path = os.path.join(sparse, "points3D.txt")
    if os.path.isfile(pts_path):
        xyz, rgb = read_points3d_text(pts_path)
    else:
        xyz, rgb = np.zeros((0, 3)), None
    image_dir = image_dir or os.path.join(root, "images")
    imgs = sorted(imgs, key=lambda d: d["name"])
    cameras, paths, names = [], [], []
    for rec in imgs:
        c = cams.get(rec["camera_id"])
        if c is None:
            raise DataError(f"{os.path.join(sparse, 'images.txt')}: image {rec['name']!r} "
                            f"references unknown camera {rec['camera_id']}")
        cameras.append(Camera(c["fx"], c["fy"], c["cx"], c["cy"], qvec2rotmat(rec["qvec"]), rec["tvec"],
                              c["width"], c["height"]))
        paths.append(os.path.join(image_dir, rec["name"]))
        names.append(rec["name"])
    test = [i for i in range(len(names)) if test_every and i % test_every == 0 and len(names) > 1]
    train = [i for i in range(len(names)) if i not in set(test)]
    ds = SceneDataset(cameras=cameras, image_paths=paths, names=names, points=xyz, colors=rgb,
                      train_ids=train, test_ids=test)
    if load_images:
        ds.load_images()
    return ds


def _num(*vals) -> str:
    # repr of a python float round-trips exactly
    return " ".join(repr(float(v)) for v in vals)


def write_colmap_text(root, cameras, names, points=None, colors=None) -> None:
    """Write a PINHOLE text model (used for fixtures and interchange)."""
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "cameras.txt"), "w") as f:
        f.write("# Camera list with one line of data per camera:\n")
        f.write(f"# Number of cameras: {len(cameras)}\n")
        for i, c in enumerate(cameras, 1):
            f.write(f"{i} PINHOLE {c.width} {c.height} {_num(c.fx, c.fy, c.cx, c.cy)}\n")
    with open(os.path.join(root, "images.txt"), "w") as f:
        f.write(f"# Number of images: {len(cameras)}, mean observations per image: 0\n")
        for i, (c, name) in enumerate(zip(cameras, names), 1):
            q = rotmat2qvec(c.rotation)
            t = c.translation
            f.write(f"{i} {_num(*q, *t)} {i} {name}\n\n")
    pts = np.zeros((0, 3)) if points is None else np.asarray(points)
    cols = np.full((len(pts), 3), 0.5) if colors is None else np.asarray(colors)
    with open(os.path.join(root, "points3D.txt"), "w") as f:
        f.write(f"# Number of points: {len(pts)}, mean track length: 0\n")
        for i, (p, c) in enumerate(zip(pts, cols), 1):
            r, g, b = (int(v) for v in np.round(np.clip(c, 0, 1) * 255))
            f.write(f"{i} {_num(*p)} {r} {g} {b} 0\n")


def rotmat2qvec(R) -> np.ndarray:
    """Rotation matrix to a unit quaternion (w, x, y, z) with w >= 0."""
    R = np.asarray(R, dtype=np.float64)
    Rxx, Ryx, Rzx, Rxy, Ryy, Rzy, Rxz, Ryz, Rzz = R.flat
    K = np.array([
        [Rxx - Ryy - Rzz, 0, 0, 0],
        [Ryx + Rxy, Ryy - Rxx - Rzz, 0, 0],
        [Rzx + Rxz, Rzy + Ryz, Rzz - Rxx - Ryy, 0],
        [Ryz - Rzy, Rzx - Rxz, Rxy - Ryx, Rxx + Ryy + Rzz]]) / 3.0
    vals, vecs = np.linalg.eigh(K)
    q = vecs[[3, 0, 1, 2], np.argmax(vals)]
    return -q if q[0] < 0 else q
