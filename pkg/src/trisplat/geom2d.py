"""Image-space triangle geometry: projection, SDF, incenter, window, barycentrics.

Edges are numbered ``k = 0, 1, 2`` running from ``q[k]`` to ``q[(k+1) % 3]``.
Every function here accepts either one triangle ``(3, 2)`` or a batch
``(M, 3, 2)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import NEAR_PLANE, Camera

DEGENERATE_AREA = 1e-8  # px^2
DEGENERATE_PERIMETER = 1e-9  # px
# phi/phi_s at or below this counts as outside: rounding leaves edge points at
# |phi| ~ 1e-17, which small sigma would otherwise lift to nearly full coverage
WINDOW_EPS = 1e-10


class DegenerateTriangle(ValueError):
    pass


def project_points(points, cam: Camera, near: float = NEAR_PLANE):
    """Pinhole projection of world points.

    Returns ``(q, z, in_front)``; ``q`` is meaningless where ``in_front`` is False.
    """
    X = np.asarray(points, dtype=np.float64) @ cam.rotation.T + cam.translation
    z = X[..., 2]
    in_front = z > near
    zs = np.where(in_front, z, 1.0)
    q = np.stack([cam.fx * X[..., 0] / zs + cam.cx, cam.fy * X[..., 1] / zs + cam.cy], axis=-1)
    return q, z, in_front


def project_vertex(v, cam: Camera, near: float = NEAR_PLANE):
    """Project one vertex; returns ``(q, z, behind_camera)``."""
    q, z, in_front = project_points(np.asarray(v, dtype=np.float64)[None], cam, near)
    return q[0], float(z[0]), not bool(in_front[0])


def signed_area2(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    e1 = q[..., 1, :] - q[..., 0, :]
    e2 = q[..., 2, :] - q[..., 0, :]
    return e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0]


def edge_functions(q):
    """Outward unit edge normals ``(..., 3, 2)`` and offsets ``(..., 3)``.

    ``L_k(p) = n_k . p + d_k`` is the signed distance to edge ``k``,
    negative on the inner side.
    """
    q = np.asarray(q, dtype=np.float64)
    a = q
    b = np.roll(q, -1, axis=-2)
    e = b - a
    length = np.linalg.norm(e, axis=-1)
    s = np.sign(signed_area2(q))[..., None]
    n = s[..., None] * np.stack([e[..., 1], -e[..., 0]], axis=-1) / np.maximum(length, 1e-300)[..., None]
    d = -np.sum(n * a, axis=-1)
    return n, d


def triangle_sdf(q, p) -> np.ndarray:
    """``max_k L_k(p)``; negative inside, zero on the boundary, positive outside.

    ``p`` may be a single point ``(2,)`` or a point batch ``(P, 2)`` for a
    single triangle.
    """
    q = np.asarray(q, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    n, d = edge_functions(q)
    if p.ndim == 1:
        return np.max(n @ p + d, axis=-1)
    return np.max(p @ n.T + d, axis=-1)


def incenter(q):
    """Incenter ``s`` and its SDF value ``phi(s) = -inradius``."""
    q = np.asarray(q, dtype=np.float64)
    A, B, C = q[..., 0, :], q[..., 1, :], q[..., 2, :]
    a = np.linalg.norm(B - C, axis=-1)
    b = np.linalg.norm(C - A, axis=-1)
    c = np.linalg.norm(A - B, axis=-1)
    per = a + b + c
    if np.any(per < DEGENERATE_PERIMETER):
        raise DegenerateTriangle("triangle perimeter below tolerance")
    s = (a[..., None] * A + b[..., None] * B + c[..., None] * C) / per[..., None]
    phi_s = -np.abs(signed_area2(q)) / per
    return s, phi_s


def inradius(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    per = np.linalg.norm(q - np.roll(q, -1, axis=-2), axis=-1).sum(axis=-1)
    return np.abs(signed_area2(q)) / per


def window(q, p, sigma: float):
    """Soft coverage ``ReLU(phi(p) / phi(s)) ** sigma``: 1 at the incenter, 0 on/outside the edges."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    phi = triangle_sdf(q, p)
    _, phi_s = incenter(q)
    r = phi / phi_s
    inside = r > WINDOW_EPS
    return np.where(inside, np.power(np.where(inside, r, 1.0), sigma), 0.0)


def barycentric(q, p):
    """Affine barycentric coordinates of ``p`` (or a batch ``(P, 2)``)."""
    q = np.asarray(q, dtype=np.float64)
    area = signed_area2(q)
    if np.any(np.abs(area) * 0.5 < DEGENERATE_AREA):
        raise DegenerateTriangle("degenerate triangle has no barycentric frame")
    p = np.asarray(p, dtype=np.float64)

    def cross(u, w):
        return u[..., 0] * w[..., 1] - u[..., 1] * w[..., 0]

    pp = p[..., None, :] if p.ndim > 1 else p
    q0, q1, q2 = q[0], q[1], q[2]
    l0 = cross(q1 - pp, q2 - pp) / area
    l1 = cross(q2 - pp, q0 - pp) / area
    l2 = cross(q0 - pp, q1 - pp) / area
    out = np.stack([l0, l1, l2], axis=-1)
    return out.reshape(p.shape[:-1] + (3,))


@dataclass
class ProjectedTriangle:
    """One triangle after projection into a view."""

    q: np.ndarray
    depth: float
    normals: np.ndarray
    offsets: np.ndarray
    incenter: np.ndarray
    incenter_sdf: float
    bbox: tuple[int, int, int, int]  # x0, y0, x1, y1 inclusive pixel indices

    @classmethod
    def from_points(cls, q, depth: float = 1.0) -> "ProjectedTriangle":
        q = np.asarray(q, dtype=np.float64).reshape(3, 2)
        if abs(signed_area2(q)) * 0.5 < DEGENERATE_AREA:
            raise DegenerateTriangle("projected triangle area below tolerance")
        n, d = edge_functions(q)
        s, phi_s = incenter(q)
        lo, hi = q.min(axis=0), q.max(axis=0)
        bbox = (int(np.ceil(lo[0] - 0.5)), int(np.ceil(lo[1] - 0.5)),
                int(np.floor(hi[0] - 0.5)), int(np.floor(hi[1] - 0.5)))
        return cls(q, float(depth), n, d, s, float(phi_s), bbox)

    def sdf(self, p):
        return triangle_sdf(self.q, p)

    def window(self, p, sigma):
        return window(self.q, p, sigma)
