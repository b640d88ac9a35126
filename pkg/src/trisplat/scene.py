"""Scene parameter model: shared vertex store, index triangles, cameras.

Triangles never own geometry; they are index triplets into one vertex
array, so every optimizer update to a vertex is seen by all triangles that
reference it. Removed entries are tombstoned via ``active`` flags until
:meth:`Scene.compact` re-indexes everything.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

SH_BASIS_SIZE = 16  # degree 3
NEAR_PLANE = 0.01


class SceneError(ValueError):
    """Raised when a scene violates its referential-integrity invariants."""


def logistic(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def map_opacity(logit, floor: float = 0.0):
    """Floored sigmoid: ``floor + (1 - floor) * logistic(logit)``.

    ``floor == 1`` is the terminal snapped state in which every opacity is
    exactly one.
    """
    if not 0.0 <= floor <= 1.0:
        raise ValueError(f"opacity floor must lie in [0, 1], got {floor}")
    scalar = np.ndim(logit) == 0
    s = logistic(np.atleast_1d(logit))
    out = floor + (1.0 - floor) * s
    return float(out[0]) if scalar else out


def map_opacity_grad(logit, floor: float = 0.0):
    """d map_opacity / d logit."""
    s = logistic(np.atleast_1d(logit))
    return (1.0 - floor) * s * (1.0 - s)


def inverse_opacity(o, floor: float = 0.0):
    """Logit whose mapped opacity under ``floor`` equals ``o``."""
    s = (np.asarray(o, dtype=np.float64) - floor) / (1.0 - floor)
    return np.log(s) - np.log1p(-s)


def triangle_opacity(o_i: float, o_j: float, o_k: float) -> tuple[float, int]:
    """Min of the three vertex opacities and the position of the first minimizer."""
    vals = (o_i, o_j, o_k)
    arg = 0
    for n in (1, 2):
        if vals[n] < vals[arg]:
            arg = n
    return vals[arg], arg


def interpolate_color(c_i, c_j, c_k, lam, tol: float = 1e-6) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)
    if lam.shape != (3,):
        raise ValueError("barycentric weights must be a triple")
    if np.any(lam < -tol) or abs(lam.sum() - 1.0) > tol:
        raise ValueError(f"barycentric weights {lam} are outside the simplex")
    cols = np.stack([np.asarray(c, dtype=np.float64) for c in (c_i, c_j, c_k)])
    return lam @ cols


@dataclass
class Camera:
    """Pinhole camera; ``rotation``/``translation`` map world to camera space."""

    fx: float
    fy: float
    cx: float
    cy: float
    rotation: np.ndarray
    translation: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.width = int(self.width)
        self.height = int(self.height)
        R = self.rotation
        if abs(np.linalg.det(R) - 1.0) >= 1e-6 or not np.allclose(R.T @ R, np.eye(3), atol=1e-6):
            raise ValueError("camera rotation must be orthonormal with det +1")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("camera image size must be positive")

    @property
    def center(self) -> np.ndarray:
        return -self.rotation.T @ self.translation

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, s: int) -> "Camera":
        """Same pose at ``s`` times the resolution."""
        return Camera(self.fx * s, self.fy * s, self.cx * s, self.cy * s,
                      self.rotation, self.translation, self.width * s, self.height * s)

    @classmethod
    def look_at(cls, eye, target, up, fx, fy, width, height, cx=None, cy=None) -> "Camera":
        """Camera at ``eye`` looking at ``target`` (x right, y down, z forward)."""
        eye = np.asarray(eye, dtype=np.float64)
        fwd = np.asarray(target, dtype=np.float64) - eye
        fwd /= np.linalg.norm(fwd)
        right = np.cross(fwd, np.asarray(up, dtype=np.float64))
        right /= np.linalg.norm(right)
        down = np.cross(fwd, right)
        R = np.stack([right, down, fwd])
        t = -R @ eye
        return cls(fx, fy, width / 2 if cx is None else cx, height / 2 if cy is None else cy,
                   R, t, width, height)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "R": self.rotation.tolist(), "t": self.translation.tolist(),
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, d: dict) -> "Camera":
        return cls(d["fx"], d["fy"], d["cx"], d["cy"], d["R"], d["t"], d["width"], d["height"])


@dataclass
class VertexSet:
    positions: np.ndarray
    sh: np.ndarray
    opacity_logit: np.ndarray
    active: np.ndarray = None

    def __post_init__(self):
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(self.positions)
        self.sh = np.ascontiguousarray(self.sh, dtype=np.float64).reshape(n, SH_BASIS_SIZE, 3)
        self.opacity_logit = np.ascontiguousarray(self.opacity_logit, dtype=np.float64).reshape(n)
        if self.active is None:
            self.active = np.ones(n, dtype=bool)
        self.active = np.asarray(self.active, dtype=bool).reshape(n)

    def __len__(self):
        return len(self.positions)

    @property
    def params_per_vertex(self) -> int:
        """Exported parameter count per vertex (position + SH); opacity is training-only."""
        return 3 + self.sh.shape[1] * self.sh.shape[2]


@dataclass
class TriangleSet:
    indices: np.ndarray
    active: np.ndarray = None

    def __post_init__(self):
        self.indices = np.ascontiguousarray(self.indices, dtype=np.int64).reshape(-1, 3)
        if self.active is None:
            self.active = np.ones(len(self.indices), dtype=bool)
        self.active = np.asarray(self.active, dtype=bool).reshape(len(self.indices))

    def __len__(self):
        return len(self.indices)


@dataclass
class Scene:
    """Vertices + triangles + the two global scalars (smoothness, opacity floor)."""

    vertices: VertexSet
    triangles: TriangleSet
    sigma: float = 1.0
    floor: float = 0.0
    extras: dict = field(default_factory=dict)

    @classmethod
    def from_arrays(cls, positions, indices, sh=None, opacity_logit=None, sigma=1.0, floor=0.0):
        positions = np.asarray(positions, dtype=np.float64)
        n = len(positions)
        if sh is None:
            sh = np.zeros((n, SH_BASIS_SIZE, 3))
        if opacity_logit is None:
            opacity_logit = np.zeros(n)
        return cls(VertexSet(positions, sh, opacity_logit), TriangleSet(indices), sigma, floor)

    def copy(self) -> "Scene":
        return copy.deepcopy(self)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.active.sum())

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.active.sum())

    def vertex_opacity(self) -> np.ndarray:
        return map_opacity(self.vertices.opacity_logit, self.floor)

    def triangle_opacity(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-triangle (min opacity, first argmin slot) for every triangle slot."""
        o = self.vertex_opacity()[self.triangles.indices]
        arg = np.argmin(o, axis=1)  # numpy returns the first minimizer
        return o[np.arange(len(o)), arg], arg

    def vertex_degree(self) -> np.ndarray:
        deg = np.zeros(len(self.vertices), dtype=np.int64)
        idx = self.triangles.indices[self.triangles.active]
        np.add.at(deg, idx.ravel(), 1)
        return deg

    def validate(self) -> None:
        """Check referential integrity; raises :class:`SceneError`."""
        V, T = self.vertices, self.triangles
        if not np.all(np.isfinite(V.positions[V.active])):
            raise SceneError("non-finite vertex position")
        if V.sh.shape[1] != SH_BASIS_SIZE:
            raise SceneError("SH coefficient array must have 16 basis entries")
        idx = T.indices[T.active]
        if len(idx):
            if idx.min() < 0 or idx.max() >= len(V):
                raise SceneError("triangle index out of range")
            if not np.all(V.active[idx]):
                raise SceneError("active triangle references an inactive vertex")
            if np.any((idx[:, 0] == idx[:, 1]) | (idx[:, 1] == idx[:, 2]) | (idx[:, 0] == idx[:, 2])):
                raise SceneError("triangle with repeated vertex index")
        if not 1e-4 - 1e-12 <= self.sigma <= 1.0 + 1e-12:
            raise SceneError(f"sigma {self.sigma} outside [1e-4, 1]")
        if not 0.0 <= self.floor <= 1.0:
            raise SceneError(f"opacity floor {self.floor} outside [0, 1]")

    def compact(self) -> tuple[np.ndarray, np.ndarray]:
        """Drop tombstoned entries and re-index.

        Returns ``(vertex_keep, triangle_keep)`` index arrays into the old
        arrays so callers can carry per-entry state (optimizer moments,
        accumulators) along.
        """
        V, T = self.vertices, self.triangles
        tkeep = np.flatnonzero(T.active)
        vkeep = np.flatnonzero(V.active)
        remap = np.full(len(V), -1, dtype=np.int64)
        remap[vkeep] = np.arange(len(vkeep))
        new_idx = remap[T.indices[tkeep]]
        if np.any(new_idx < 0):
            raise SceneError("compaction would leave a triangle referencing a removed vertex")
        self.vertices = VertexSet(V.positions[vkeep], V.sh[vkeep], V.opacity_logit[vkeep])
        self.triangles = TriangleSet(new_idx)
        return vkeep, tkeep

    def subset(self, triangle_ids) -> "Scene":
        """New compacted scene holding only ``triangle_ids`` and their vertices."""
        out = self.copy()
        keep = np.zeros(len(out.triangles), dtype=bool)
        keep[np.asarray(list(triangle_ids), dtype=np.int64)] = True
        out.triangles.active &= keep
        used = np.zeros(len(out.vertices), dtype=bool)
        used[out.triangles.indices[out.triangles.active].ravel()] = True
        out.vertices.active &= used
        out.compact()
        return out
