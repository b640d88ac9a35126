"""3D Delaunay tetrahedralization and the initial triangle set.

Incremental Bowyer-Watson insertion. The hull is closed with "ghost"
tetrahedra that share one vertex at infinity (``-1``), which removes the need
for a finite super-tetrahedron. Orientation and in-sphere tests run in
floating point with a forward error bound and fall back to exact rational
arithmetic when the sign is uncertain.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .scene import Scene, TriangleSet, VertexSet, inverse_opacity

log = logging.getLogger(__name__)

INF = -1
_EPS = np.finfo(np.float64).eps / 2
_O3D_BOUND = (7.0 + 56.0 * _EPS) * _EPS
_INS_BOUND = (16.0 + 224.0 * _EPS) * _EPS


class DelaunayError(ValueError):
    pass


def _orient3d_exact(a, b, c, d):
    a = [Fraction(x) for x in a]
    b = [Fraction(x) for x in b]
    c = [Fraction(x) for x in c]
    d = [Fraction(x) for x in d]
    ad = [a[i] - d[i] for i in range(3)]
    bd = [b[i] - d[i] for i in range(3)]
    cd = [c[i] - d[i] for i in range(3)]
    det = (ad[0] * (bd[1] * cd[2] - bd[2] * cd[1])
           + bd[0] * (cd[1] * ad[2] - cd[2] * ad[1])
           + cd[0] * (ad[1] * bd[2] - ad[2] * bd[1]))
    return (det > 0) - (det < 0)


def orient3d(a, b, c, d) -> int:
    """Sign of ``det[a - d; b - d; c - d]``; +1, 0 or -1, exact."""
    adx, ady, adz = a[0] - d[0], a[1] - d[1], a[2] - d[2]
    bdx, bdy, bdz = b[0] - d[0], b[1] - d[1], b[2] - d[2]
    cdx, cdy, cdz = c[0] - d[0], c[1] - d[1], c[2] - d[2]
    t1, t2 = bdy * cdz, bdz * cdy
    t3, t4 = cdy * adz, cdz * ady
    t5, t6 = ady * bdz, adz * bdy
    det = adx * (t1 - t2) + bdx * (t3 - t4) + cdx * (t5 - t6)
    perm = (abs(t1) + abs(t2)) * abs(adx) + (abs(t3) + abs(t4)) * abs(bdx) + (abs(t5) + abs(t6)) * abs(cdx)
    # the extra factor covers the rounding in the input subtractions
    if abs(det) > 4.0 * _O3D_BOUND * perm:
        return 1 if det > 0 else -1
    return _orient3d_exact(a, b, c, d)


def _insphere_det(a, b, c, d, e, absolute=False):
    f = abs if absolute else (lambda v: v)
    aex, aey, aez = a[0] - e[0], a[1] - e[1], a[2] - e[2]
    bex, bey, bez = b[0] - e[0], b[1] - e[1], b[2] - e[2]
    cex, cey, cez = c[0] - e[0], c[1] - e[1], c[2] - e[2]
    dex, dey, dez = d[0] - e[0], d[1] - e[1], d[2] - e[2]
    if absolute:
        aex, aey, aez, bex, bey, bez = map(abs, (aex, aey, aez, bex, bey, bez))
        cex, cey, cez, dex, dey, dez = map(abs, (cex, cey, cez, dex, dey, dez))

        def sub(x, y):
            return x + y
    else:
        def sub(x, y):
            return x - y
    ab = sub(aex * bey, bex * aey)
    bc = sub(bex * cey, cex * bey)
    cd = sub(cex * dey, dex * cey)
    da = sub(dex * aey, aex * dey)
    ac = sub(aex * cey, cex * aey)
    bd = sub(bex * dey, dex * bey)
    abc = aez * bc + f(-bez * ac) + cez * ab if absolute else aez * bc - bez * ac + cez * ab
    bcd = bez * cd + f(-cez * bd) + dez * bc if absolute else bez * cd - cez * bd + dez * bc
    cda = cez * da + dez * ac + aez * cd
    dab = dez * ab + aez * bd + bez * da
    alift = aex * aex + aey * aey + aez * aez
    blift = bex * bex + bey * bey + bez * bez
    clift = cex * cex + cey * cey + cez * cez
    dlift = dex * dex + dey * dey + dez * dez
    if absolute:
        return dlift * abc + clift * dab + blift * cda + alift * bcd
    return (dlift * abc - clift * dab) + (blift * cda - alift * bcd)


def insphere(a, b, c, d, e) -> int:
    """+1 if ``e`` is strictly inside the sphere through a positively oriented ``abcd``."""
    det = _insphere_det(a, b, c, d, e)
    perm = _insphere_det(a, b, c, d, e, absolute=True)
    if abs(det) > 8.0 * _INS_BOUND * perm:
        return 1 if det > 0 else -1
    det = _insphere_det(*[[Fraction(x) for x in p] for p in (a, b, c, d, e)])
    return (det > 0) - (det < 0)


@dataclass
class Tetrahedralization:
    points: np.ndarray  # (P, 3), jittered coordinates actually triangulated
    tets: np.ndarray    # (Q, 4), positively oriented under :func:`orient3d`


class _Mesh:
    def __init__(self, pts):
        self.p = [tuple(float(x) for x in row) for row in pts]
        self.tets = []
        self.nbr = []
        self.alive = []
        self.last = 0

    def add(self, verts):
        self.tets.append(list(verts))
        self.nbr.append([-1, -1, -1, -1])
        self.alive.append(True)
        return len(self.tets) - 1

    def conflict(self, t, pi) -> bool:
        v = self.tets[t]
        P = self.p
        if v[3] != INF:
            return insphere(P[v[0]], P[v[1]], P[v[2]], P[v[3]], P[pi]) > 0
        o = orient3d(P[v[0]], P[v[1]], P[v[2]], P[pi])
        if o != 0:
            return o > 0
        f = self.nbr[t][3]
        w = self.tets[f]
        return insphere(P[w[0]], P[w[1]], P[w[2]], P[w[3]], P[pi]) > 0

    def locate(self, pi, rng) -> int:
        P = self.p
        t = self.last
        if not self.alive[t]:
            t = next(i for i in range(len(self.tets) - 1, -1, -1) if self.alive[i])
        if self.tets[t][3] == INF:
            t = self.nbr[t][3]
        for _ in range(4 * len(self.tets) + 16):
            v = self.tets[t]
            if v[3] == INF:
                return t  # walked out through a hull face
            moved = False
            for i in rng.permutation(4):
                w = list(v)
                w[i] = pi
                if orient3d(P[w[0]], P[w[1]], P[w[2]], P[w[3]]) < 0:
                    t = self.nbr[t][i]
                    moved = True
                    break
            if not moved:
                return t
        # walk failed to converge; scan
        for t in range(len(self.tets)):
            if self.alive[t] and self.conflict(t, pi):
                return t
        raise DelaunayError("point location failed")

    def insert(self, pi, rng):
        seed = self.locate(pi, rng)
        if not self.conflict(seed, pi):
            # the containing tet always conflicts unless pi duplicates a vertex
            raise DelaunayError(f"point {pi} duplicates an existing vertex")
        cavity = {seed}
        stack = [seed]
        boundary = []
        rejected = set()
        while stack:
            t = stack.pop()
            for i in range(4):
                n = self.nbr[t][i]
                if n in cavity:
                    continue
                if n not in rejected and self.conflict(n, pi):
                    cavity.add(n)
                    stack.append(n)
                else:
                    rejected.add(n)
                    boundary.append((t, i))
        open_faces = {}
        for t, i in boundary:
            verts = list(self.tets[t])
            verts[i] = pi
            nt = self.add(verts)
            out = self.nbr[t][i]
            self.nbr[nt][i] = out
            self.nbr[out][self.nbr[out].index(t)] = nt
            for j in range(4):
                if j == i:
                    continue
                key = tuple(sorted(verts[k] for k in range(4) if k != j))
                other = open_faces.pop(key, None)
                if other is None:
                    open_faces[key] = (nt, j)
                else:
                    ot, oj = other
                    self.nbr[nt][j] = ot
                    self.nbr[ot][oj] = nt
            self.last = nt
        if open_faces:
            raise DelaunayError("cavity retriangulation left unmatched faces")
        for t in cavity:
            self.alive[t] = False


def _initial_simplex(pts):
    d0 = np.linalg.norm(pts - pts[0], axis=1)
    i1 = int(np.argmax(d0))
    if d0[i1] == 0:
        raise DelaunayError("all points coincide")
    u = pts[i1] - pts[0]
    dl = np.linalg.norm(np.cross(pts - pts[0], u), axis=1)
    i2 = int(np.argmax(dl))
    if dl[i2] == 0:
        raise DelaunayError("all points are collinear")
    nrm = np.cross(u, pts[i2] - pts[0])
    dp = np.abs((pts - pts[0]) @ nrm)
    order = np.argsort(-dp)
    for i3 in order:
        if orient3d(pts[0], pts[i1], pts[i2], pts[i3]) != 0:
            return [0, i1, i2, int(i3)]
    raise DelaunayError("all points are coplanar; a 3D tetrahedralization needs volume")


def delaunay3d(points, jitter_seed: int = 0, jitter: float = 1e-9) -> Tetrahedralization:
    """Delaunay tetrahedralization of ``points`` (P >= 4, not all coplanar).

    Points are first perturbed by uniform noise of ``jitter`` times the
    bounding-box diagonal.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) < 4:
        raise DelaunayError(f"need at least 4 points, got {len(pts)}")
    if not np.all(np.isfinite(pts)):
        raise DelaunayError("non-finite input coordinates")
    rng = np.random.default_rng(jitter_seed)
    diag = float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))
    if diag == 0:
        raise DelaunayError("all points coincide")
    # thickness of the cloud along its thinnest principal axis
    thick = np.linalg.svd(pts - pts.mean(axis=0), compute_uv=False)[-1] / np.sqrt(len(pts))
    if thick < 1e-7 * diag:
        raise DelaunayError(f"points are coplanar (thickness {thick:.3g} vs extent {diag:.3g}); "
                            "a 3D tetrahedralization needs volume")
    pts = pts + rng.uniform(-1.0, 1.0, pts.shape) * jitter * diag
    _, first = np.unique(pts, axis=0, return_index=True)
    if len(first) < len(pts):
        log.warning("dropping %d duplicate points", len(pts) - len(first))

    init = _initial_simplex(pts)
    mesh = _Mesh(pts)
    P = mesh.p
    a, b, c, d = init
    if orient3d(P[a], P[b], P[c], P[d]) < 0:
        a, b = b, a
    t0 = mesh.add([a, b, c, d])
    for i in range(4):
        f = [v for k, v in enumerate(mesh.tets[t0]) if k != i]
        if orient3d(P[f[0]], P[f[1]], P[f[2]], P[mesh.tets[t0][i]]) > 0:
            f[0], f[1] = f[1], f[0]
        g = mesh.add(f + [INF])
        mesh.nbr[t0][i] = g
        mesh.nbr[g][3] = t0
    faces = {}
    for g in range(1, 5):
        for j in range(3):
            key = frozenset(v for k, v in enumerate(mesh.tets[g]) if k != j)
            if key in faces:
                h, hj = faces.pop(key)
                mesh.nbr[g][j] = h
                mesh.nbr[h][hj] = g
            else:
                faces[key] = (g, j)

    rest = np.setdiff1d(np.sort(first), init)
    rest = rest[rng.permutation(len(rest))]
    for pi in rest:
        mesh.insert(int(pi), rng)

    tets = np.array([v for v, ok in zip(mesh.tets, mesh.alive) if ok and v[3] != INF], dtype=np.int64)
    return Tetrahedralization(pts, tets.reshape(-1, 4))


def extract_unique_faces(tets) -> TriangleSet:
    """Every distinct vertex triple appearing as a tetrahedron face (sorted ascending)."""
    tets = np.asarray(tets, dtype=np.int64).reshape(-1, 4)
    if len(tets) == 0:
        return TriangleSet(np.zeros((0, 3), np.int64))
    faces = np.concatenate([tets[:, [1, 2, 3]], tets[:, [0, 2, 3]], tets[:, [0, 1, 3]], tets[:, [0, 1, 2]]])
    faces = np.unique(np.sort(faces, axis=1), axis=0)
    return TriangleSet(faces)


def voxel_decimate(points, colors=None, voxel: float = 0.0):
    """Average points (and colors) per voxel of edge ``voxel``."""
    pts = np.asarray(points, dtype=np.float64)
    if voxel <= 0:
        return pts, colors
    keys = np.floor((pts - pts.min(axis=0)) / voxel).astype(np.int64)
    _, inv, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
    inv = inv.ravel()
    out = np.zeros((len(counts), 3))
    np.add.at(out, inv, pts)
    out /= counts[:, None]
    if colors is None:
        return out, None
    col = np.zeros((len(counts), 3))
    np.add.at(col, inv, np.asarray(colors, dtype=np.float64))
    return out, col / counts[:, None]


def init_attributes(points, triangles: TriangleSet, colors=None, opacity: float = 0.1) -> Scene:
    """Scene whose vertices render their point color (mid-gray if absent) at opacity ``opacity``."""
    from .sh import rgb_to_dc

    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    sh = np.zeros((n, 16, 3))
    if colors is not None:
        sh[:, 0, :] = rgb_to_dc(np.clip(np.asarray(colors, dtype=np.float64), 0.0, 1.0))
    logit = np.full(n, float(inverse_opacity(opacity)))
    scene = Scene(VertexSet(pts, sh, logit), TriangleSet(triangles.indices.copy()))
    deg = scene.vertex_degree()
    scene.vertices.active &= deg > 0
    scene.compact()
    return scene


def delaunay_init(points, colors=None, jitter_seed: int = 0, opacity: float = 0.1,
                  voxel: float = 0.0) -> Scene:
    """Initial semi-connected triangle set from a sparse point cloud."""
    pts, colors = voxel_decimate(points, colors, voxel)
    tet = delaunay3d(pts, jitter_seed)
    faces = extract_unique_faces(tet.tets)
    log.info("delaunay init: %d points -> %d tets -> %d faces", len(pts), len(tet.tets), len(faces))
    return init_attributes(pts, faces, colors, opacity)
