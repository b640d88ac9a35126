"""Binary little-endian PLY export/import of the final colored mesh.

Vertices carry float32 ``x y z`` and uchar ``red green blue`` (the DC-band
color, clamped and rounded); ``mode="sh-dc"`` additionally stores the raw
float32 DC coefficients ``f_dc_0..2``. Faces are ``list uchar int
vertex_indices`` with exactly three entries. Opacity and smoothness are not
written.
"""

from __future__ import annotations

import numpy as np

from ..scene import Scene
from ..sh import dc_to_rgb
from .errors import DataError, FormatError

MODES = ("vertex-color", "sh-dc")

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def vertex_rgb8(scene: Scene) -> np.ndarray:
    rgb = dc_to_rgb(scene.vertices.sh[:, 0, :])
    return np.round(np.clip(rgb, 0.0, 1.0) * 255.0).astype(np.uint8)


def export_ply(scene: Scene, path, mode: str = "vertex-color") -> None:
    if mode not in MODES:
        raise ValueError(f"unknown PLY mode {mode!r} (choose from {', '.join(MODES)})")
    if not (scene.vertices.active.all() and scene.triangles.active.all()):
        scene = scene.copy()
        scene.compact()
    V, T = scene.vertices, scene.triangles
    props = [("x", "<f4"), ("y", "<f4"), ("z", "<f4"), ("red", "u1"), ("green", "u1"), ("blue", "u1")]
    if mode == "sh-dc":
        props += [("f_dc_0", "<f4"), ("f_dc_1", "<f4"), ("f_dc_2", "<f4")]
    vert = np.empty(len(V), dtype=props)
    for k, name in enumerate("xyz"):
        vert[name] = V.positions[:, k]
    rgb = vertex_rgb8(scene)
    for k, name in enumerate(("red", "green", "blue")):
        vert[name] = rgb[:, k]
    if mode == "sh-dc":
        for k in range(3):
            vert[f"f_dc_{k}"] = V.sh[:, 0, k]
    face = np.empty(len(T), dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    face["n"] = 3
    face["idx"] = T.indices
    tname = {"<f4": "float", "u1": "uchar"}
    header = ["ply", "format binary_little_endian 1.0", "comment exported by trisplat",
              f"element vertex {len(V)}"]
    header += [f"property {tname[t]} {n}" for n, t in props]
    header += [f"element face {len(T)}", "property list uchar int vertex_indices", "end_header"]
    try:
        with open(path, "wb") as f:
            f.write(("\n".join(header) + "\n").encode("ascii"))
            f.write(vert.tobytes())
            f.write(face.tobytes())
    except OSError as e:
        raise DataError(f"{path}: cannot write PLY ({e})") from e


def _parse_header(path, f):
    first = f.readline()
    if first.strip() != b"ply":
        raise FormatError(path, 1, "missing 'ply' magic")
    elements = []
    fmt = None
    lineno = 1
    while True:
        raw = f.readline()
        lineno += 1
        if not raw:
            raise FormatError(path, lineno, "unexpected end of file inside the header")
        tok = raw.decode("ascii", errors="replace").split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "end_header":
            break
        if tok[0] == "format":
            fmt = tok[1]
        elif tok[0] == "element":
            elements.append({"name": tok[1], "count": int(tok[2]), "props": []})
        elif tok[0] == "property":
            if not elements:
                raise FormatError(path, lineno, "property before any element")
            if tok[1] == "list":
                if tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise FormatError(path, lineno, "unknown list property type")
                elements[-1]["props"].append((tok[4], "list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]]))
            else:
                if tok[1] not in _PLY_TYPES:
                    raise FormatError(path, lineno, f"unknown property type {tok[1]!r}")
                elements[-1]["props"].append((tok[2], _PLY_TYPES[tok[1]]))
        else:
            raise FormatError(path, lineno, f"unexpected header keyword {tok[0]!r}")
    if fmt != "binary_little_endian":
        raise FormatError(path, None, f"only binary_little_endian PLY is supported, got {fmt!r}")
    return elements


def import_ply(path):
    """Read a PLY written by :func:`export_ply` (or any triangle PLY of that layout).

    Returns ``(positions float64 Nx3, colors float64 Nx3 in [0, 1] or None,
    faces int64 Mx3, extra)`` where ``extra`` holds other vertex properties.
    """
    try:
        f = open(path, "rb")
    except OSError as e:
        raise DataError(f"{path}: cannot open PLY ({e})") from e
    with f:
        elements = _parse_header(path, f)
        data = f.read()
    off = 0
    pos = cols = faces = None
    extra = {}
    for el in elements:
        props = el["props"]
        if any(p[1] == "list" for p in props):
            if el["name"] != "face" or len(props) != 1:
                raise FormatError(path, None, f"unsupported list layout in element {el['name']!r}")
            _, _, ct, it = props[0]
            dt = np.dtype([("n", "<" + ct), ("idx", "<" + it, (3,))])
            need = dt.itemsize * el["count"]
            if len(data) - off < need:
                raise FormatError(path, None, "file truncated in face data")
            arr = np.frombuffer(data, dtype=dt, count=el["count"], offset=off)
            if el["count"] and np.any(arr["n"] != 3):
                raise FormatError(path, None, "only triangular faces are supported")
            faces = arr["idx"].astype(np.int64)
        else:
            dt = np.dtype([(n, "<" + t) for n, t in props])
            need = dt.itemsize * el["count"]
            if len(data) - off < need:
                raise FormatError(path, None, f"file truncated in {el['name']} data")
            arr = np.frombuffer(data, dtype=dt, count=el["count"], offset=off)
            if el["name"] == "vertex":
                pos = np.stack([arr["x"], arr["y"], arr["z"]], axis=1).astype(np.float64)
                if all(c in arr.dtype.names for c in ("red", "green", "blue")):
                    cols = np.stack([arr["red"], arr["green"], arr["blue"]], axis=1).astype(np.float64) / 255.0
                for n in arr.dtype.names:
                    if n not in ("x", "y", "z", "red", "green", "blue"):
                        extra[n] = arr[n].astype(np.float64)
        off += need
    if pos is None:
        raise FormatError(path, None, "no vertex element")
    if faces is None:
        faces = np.zeros((0, 3), np.int64)
    if len(faces) and (faces.min() < 0 or faces.max() >= len(pos)):
        raise FormatError(path, None, "face index out of range")
    return pos, cols, faces, extra


def scene_from_ply(path) -> Scene:
    """Opaque scene (floor 1, sigma 1e-4) with DC colors from a PLY file."""
    from ..sh import rgb_to_dc

    pos, cols, faces, extra = import_ply(path)
    sh = np.zeros((len(pos), 16, 3))
    if all(f"f_dc_{k}" in extra for k in range(3)):
        sh[:, 0, :] = np.stack([extra[f"f_dc_{k}"] for k in range(3)], axis=1)
    elif cols is not None:
        sh[:, 0, :] = rgb_to_dc(cols)
    return Scene.from_arrays(pos, faces, sh=sh, sigma=1e-4, floor=1.0)


def ply_header(path) -> list:
    with open(path, "rb") as f:
        lines = []
        while True:
            raw = f.readline()
            if not raw:
                break
            lines.append(raw.decode("ascii", errors="replace").rstrip("\n"))
            if lines[-1] == "end_header":
                break
    return lines

