"""Checkpoint container.

Layout::

    b"TSP2" | u32 version | u32 header length | JSON header | raw array bytes

The JSON header lists each named array (dtype, shape, byte offset into the
payload) and carries a free-form ``meta`` dict. Arrays are stored verbatim,
so a save/load round trip is bit-exact; JSON floats round-trip exactly
through ``repr``.
"""

from __future__ import annotations

import json
import os
import struct

import numpy as np

from ..scene import Scene, TriangleSet, VertexSet
from .errors import DataError

MAGIC = b"TSP2"
VERSION = 1


class CheckpointVersionError(DataError):
    pass


def save_checkpoint(path, arrays: dict, meta: dict | None = None) -> None:
    sections = []
    blobs = []
    offset = 0
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        if a.dtype.hasobject:
            raise TypeError(f"array {name!r} has object dtype")
        raw = a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes()
        sections.append({"name": name, "dtype": a.dtype.newbyteorder("<").str, "shape": list(a.shape),
                         "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"sections": sections, "meta": meta or {}}, sort_keys=True).encode("utf-8")
    tmp = f"{path}.tmp"
    d = os.path.dirname(os.fspath(path))
    if d:
        os.makedirs(d, exist_ok=True)
    try:
        with open(tmp, "wb") as f:
            f.write(MAGIC)
            f.write(struct.pack("<II", VERSION, len(header)))
            f.write(header)
            for b in blobs:
                f.write(b)
        os.replace(tmp, path)
    except OSError as e:
        raise DataError(f"{path}: cannot write checkpoint ({e})") from e


def load_checkpoint(path):
    """``(arrays, meta)`` from :func:`save_checkpoint` output."""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise DataError(f"{path}: cannot read checkpoint ({e})") from e
    if data[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint (bad magic {data[:4]!r})")
    if len(data) < 12:
        raise DataError(f"{path}: truncated checkpoint header")
    version, hlen = struct.unpack("<II", data[4:12])
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version}, this build reads {VERSION}")
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise DataError(f"{path}: corrupt checkpoint header ({e})") from e
    base = 12 + hlen
    arrays = {}
    for s in header["sections"]:
        start = base + s["offset"]
        if start + s["nbytes"] > len(data):
            raise DataError(f"{path}: truncated section {s['name']!r}")
        arrays[s["name"]] = np.frombuffer(data, dtype=np.dtype(s["dtype"]), count=int(np.prod(s["shape"])),
                                          offset=start).reshape(s["shape"]).copy()
    return arrays, header["meta"]


def scene_arrays(scene: Scene, prefix: str = "scene/") -> dict:
    V, T = scene.vertices, scene.triangles
    return {prefix + "positions": V.positions, prefix + "sh": V.sh, prefix + "opacity_logit": V.opacity_logit,
            prefix + "vertex_active": V.active, prefix + "indices": T.indices,
            prefix + "triangle_active": T.active}


def scene_from_arrays(arrays: dict, sigma: float, floor: float, prefix: str = "scene/") -> Scene:
    V = VertexSet(arrays[prefix + "positions"], arrays[prefix + "sh"], arrays[prefix + "opacity_logit"],
                  arrays[prefix + "vertex_active"])
    T = TriangleSet(arrays[prefix + "indices"], arrays[prefix + "triangle_active"])
    return Scene(V, T, float(sigma), float(floor))


def save_scene(scene: Scene, path, meta: dict | None = None) -> None:
    m = {"kind": "scene", "sigma": scene.sigma, "floor": scene.floor}
    m.update(meta or {})
    save_checkpoint(path, scene_arrays(scene), m)


def load_scene(path) -> Scene:
    """Scene from any checkpoint written by :func:`save_scene` or the trainer."""
    arrays, meta = load_checkpoint(path)
    if "scene/positions" not in arrays:
        raise DataError(f"{path}: checkpoint holds no scene")
    return scene_from_arrays(arrays, meta["sigma"], meta["floor"])
