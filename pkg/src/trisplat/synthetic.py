"""Self-contained synthetic fixtures rendered with the engine itself.

Presets:

``two-objects``
    A subdivided octahedron (object A) and a box with center-split faces
    (object B), about 56 opaque triangles, 20 views at 128x128 that never
    see the objects overlap. Ships triangle labels, object-A masks and the
    ground-truth scene.
``colored-triangle-cloud``
    A soup of random colored triangles in front of forward-facing cameras.
``textured-quad``
    A finely tessellated quad whose vertex colors form a smooth pattern.

Ground truth is rendered at sigma 1e-4 with every opacity at one, so it is
exactly representable by opaque triangles. Sparse points are the ground
truth vertices, plus area-weighted samples on the surface for two-objects,
with Gaussian jitter.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .io.checkpoint import save_scene
from .io.dataset import write_manifest
from .io.images import write_image, write_mask
from .io.ply import export_ply
from .raster import render_aa
from .scene import Camera, Scene
from .sh import rgb_to_dc

PRESETS = ("two-objects", "colored-triangle-cloud", "textured-quad")
GT_SIGMA = 1e-4
# vertices alone are too sparse for the Delaunay init to cover the large faces
SURFACE_POINTS = {"two-objects": 300}


def _octahedron(levels: int = 1):
    v = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)]
    f = [(0, 2, 4), (2, 1, 4), (1, 3, 4), (3, 0, 4), (2, 0, 5), (1, 2, 5), (3, 1, 5), (0, 3, 5)]
    verts = [np.array(p, dtype=np.float64) for p in v]
    faces = f
    for _ in range(levels):
        mid = {}

        def m(a, b):
            key = (min(a, b), max(a, b))
            if key not in mid:
                p = verts[a] + verts[b]
                verts.append(p / np.linalg.norm(p))
                mid[key] = len(verts) - 1
            return mid[key]

        nf = []
        for a, b, c in faces:
            ab, bc, ca = m(a, b), m(b, c), m(c, a)
            nf += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        faces = nf
    return np.array(verts), np.array(faces, dtype=np.int64)


def _split_box(half):
    """Axis-aligned box, each face fanned into four triangles around its center."""
    hx, hy, hz = half
    corners = np.array([[x, y, z] for x in (-hx, hx) for y in (-hy, hy) for z in (-hz, hz)])
    quads = [(0, 1, 3, 2), (4, 6, 7, 5), (0, 4, 5, 1), (2, 3, 7, 6), (0, 2, 6, 4), (1, 5, 7, 3)]
    verts = list(corners)
    faces = []
    for q in quads:
        verts.append(corners[list(q)].mean(axis=0))
        c = len(verts) - 1
        for k in range(4):
            faces.append((q[k], q[(k + 1) % 4], c))
    return np.array(verts), np.array(faces, dtype=np.int64)


def _affine_colors(verts, base, grad):
    return np.clip(base + (verts - verts.mean(axis=0)) @ grad, 0.05, 0.95)


def _rot(axis, angle):
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    K = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + np.sin(angle) * K + (1 - np.cos(angle)) * K @ K


def _scene(verts, faces, colors):
    sh = np.zeros((len(verts), 16, 3))
    sh[:, 0, :] = rgb_to_dc(colors)
    return Scene.from_arrays(verts, faces, sh=sh, opacity_logit=np.zeros(len(verts)), sigma=GT_SIGMA, floor=1.0)


def _orbit_cameras(rng, n, radius, size, focal, avoid_axis=None, max_cos=0.45, min_elev=-0.35, max_elev=0.75):
    cams = []
    while len(cams) < n:
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        if not min_elev <= d[1] * -1 <= max_elev:  # world y points down
            continue
        if avoid_axis is not None and abs(d @ avoid_axis) > max_cos:
            continue
        eye = d * radius
        cams.append(Camera.look_at(eye, np.zeros(3), (0.0, 1.0, 0.0) if abs(d[1]) < 0.95 else (0.0, 0.0, 1.0),
                                   focal, focal, size, size))
    return cams


def two_objects(rng, size: int = 128, n_views: int = 20):
    va, fa = _octahedron(1)                       # 32 faces, 18 vertices
    va = va @ _rot((0.3, 1.0, 0.2), 0.5).T * 0.45 + np.array([-0.62, 0.05, 0.0])
    vb, fb = _split_box((0.3, 0.36, 0.3))          # 24 faces, 14 vertices
    vb = vb @ _rot((0.1, 1.0, -0.3), 0.6).T + np.array([0.62, -0.05, 0.05])
    ca = _affine_colors(va, np.array([0.85, 0.35, 0.2]), np.array([[0.3, 0.0, 0.1], [0.0, 0.35, 0.0], [0.0, 0.1, 0.3]]))
    cb = _affine_colors(vb, np.array([0.2, 0.45, 0.85]), np.array([[0.25, 0.1, 0.0], [0.0, 0.3, 0.1], [0.1, 0.0, 0.3]]))
    verts = np.concatenate([va, vb])
    faces = np.concatenate([fa, fb + len(va)])
    colors = np.concatenate([ca, cb])
    labels = {"object_a": list(range(len(fa))), "object_b": list(range(len(fa), len(fa) + len(fb)))}
    cams = _orbit_cameras(rng, n_views, 3.2, size, 1.25 * size, avoid_axis=np.array([1.0, 0.0, 0.0]))
    return verts, faces, colors, cams, labels


def colored_triangle_cloud(rng, size: int = 64, n_views: int = 12, n_tris: int = 24):
    centers = rng.uniform(-0.6, 0.6, (n_tris, 3)) * np.array([1.0, 1.0, 0.5])
    verts = (centers[:, None, :] + rng.normal(scale=0.18, size=(n_tris, 3, 3))).reshape(-1, 3)
    faces = np.arange(3 * n_tris).reshape(-1, 3)
    colors = rng.uniform(0.1, 0.9, (len(verts), 3))
    cams = []
    for i in range(n_views):
        a = 2 * np.pi * i / n_views
        eye = np.array([0.6 * np.cos(a), 0.4 * np.sin(a), -3.0])
        cams.append(Camera.look_at(eye, np.zeros(3), (0.0, 1.0, 0.0), 1.2 * size, 1.2 * size, size, size))
    return verts, faces, colors, cams, {}


def textured_quad(rng, size: int = 64, n_views: int = 12, cells: int = 8):
    g = np.linspace(-0.8, 0.8, cells + 1)
    X, Y = np.meshgrid(g, g)
    verts = np.stack([X.ravel(), Y.ravel(), np.zeros(X.size)], axis=1)
    faces = []
    for i in range(cells):
        for j in range(cells):
            a = i * (cells + 1) + j
            faces += [(a, a + 1, a + cells + 2), (a, a + cells + 2, a + cells + 1)]
    u, v = verts[:, 0], verts[:, 1]
    colors = np.stack([0.5 + 0.4 * np.sin(3 * u), 0.5 + 0.4 * np.cos(2.5 * v), 0.5 + 0.3 * np.sin(2 * (u + v))], axis=1)
    cams = []
    for i in range(n_views):
        a = 2 * np.pi * i / n_views
        eye = np.array([0.9 * np.cos(a), 0.6 * np.sin(a), -2.6])
        cams.append(Camera.look_at(eye, np.zeros(3), (0.0, 1.0, 0.0), 1.1 * size, 1.1 * size, size, size))
    return verts, np.array(faces, dtype=np.int64), colors, cams, {}


_BUILDERS = {"two-objects": two_objects, "colored-triangle-cloud": colored_triangle_cloud,
             "textured-quad": textured_quad}


def build_preset(name: str, seed: int = 0):
    if name not in _BUILDERS:
        raise KeyError(f"unknown preset {name!r}; available presets: {', '.join(PRESETS)}")
    rng = np.random.default_rng(seed)
    verts, faces, colors, cams, labels = _BUILDERS[name](rng)
    return _scene(verts, faces, colors), cams, labels, rng


def _choose_mask_views(winners, a_ids, k=5):
    """Greedy pick of ``k`` views maximizing how many object-A triangles win a pixel."""
    seen = [set(np.unique(w[np.isin(w, a_ids)]).tolist()) for w in winners]
    chosen, covered = [], set()
    for _ in range(min(k, len(winners))):
        best = max((i for i in range(len(winners)) if i not in chosen),
                   key=lambda i: (len(seen[i] - covered), -i))
        chosen.append(best)
        covered |= seen[best]
    return sorted(chosen), covered


def sample_surface(scene: Scene, n: int, rng):
    """``n`` points drawn uniformly by area over the triangles, with their interpolated DC colors."""
    V = scene.vertices
    tri = scene.triangles.indices[scene.triangles.active]
    P = V.positions[tri]
    area = 0.5 * np.linalg.norm(np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]), axis=1)
    pick = rng.choice(len(tri), size=n, p=area / area.sum())
    u, v = rng.random(n), rng.random(n)
    flip = u + v > 1
    u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
    lam = np.stack([1 - u - v, u, v], axis=1)
    pts = np.einsum("nk,nkd->nd", lam, P[pick])
    rgb = 0.5 + 0.2820947917738781 * V.sh[tri[pick], 0, :]
    return pts, np.einsum("nk,nkd->nd", lam, rgb)


def make_synthetic(name: str, out_dir, seed: int = 0, aa_scale: int = 2, point_jitter: float = 0.005,
                   test_every: int = 5, surface_points: int | None = None) -> dict:
    """Write a fixture directory; returns a summary dict.

    ``surface_points`` extra sparse points are sampled on the ground-truth
    surface (area weighted) before jitter; ``None`` uses the preset default.
    """
    scene, cams, labels, rng = build_preset(name, seed)
    if surface_points is None:
        surface_points = SURFACE_POINTS.get(name, 0)
    os.makedirs(os.path.join(out_dir, "images"), exist_ok=True)
    names, files, winners = [], [], []
    for i, cam in enumerate(cams):
        out = render_aa(scene, cam, aa_scale, sigma=GT_SIGMA, floor=1.0)
        nm = f"view_{i:03d}"
        write_image(out.color, os.path.join(out_dir, "images", nm + ".png"))
        names.append(nm)
        files.append(f"images/{nm}.png")
        winners.append(render_aa(scene, cam, 1, sigma=GT_SIGMA, floor=1.0).winner_id)
    V = scene.vertices
    scale = float(np.linalg.norm(V.positions.max(axis=0) - V.positions.min(axis=0)))
    pts, cols = V.positions, 0.5 + 0.2820947917738781 * V.sh[:, 0, :]
    if surface_points:
        sp, sc = sample_surface(scene, surface_points, rng)
        pts, cols = np.concatenate([pts, sp]), np.concatenate([cols, sc])
    pts = pts + rng.normal(scale=point_jitter * scale, size=pts.shape)
    cols = np.clip(cols + rng.normal(scale=0.02, size=cols.shape), 0, 1)
    test = [i for i in range(len(cams)) if test_every and i % test_every == test_every - 1]
    train = [i for i in range(len(cams)) if i not in test]
    extras = {"preset": name, "seed": seed, "aa_scale": aa_scale, "gt_sigma": GT_SIGMA}
    if labels:
        a_ids = np.array(labels["object_a"])
        b_ids = np.array(labels["object_b"])
        mask_views, covered = _choose_mask_views(winners, a_ids)
        os.makedirs(os.path.join(out_dir, "masks"), exist_ok=True)
        for i in mask_views:
            write_mask(np.isin(winners[i], a_ids), os.path.join(out_dir, "masks", names[i] + ".png"))
        overlap = [i for i, w in enumerate(winners)
                   if _touch(np.isin(w, a_ids), np.isin(w, b_ids))]
        with open(os.path.join(out_dir, "labels.json"), "w") as f:
            json.dump({**labels, "mask_views": mask_views, "covered_a": sorted(int(c) for c in covered),
                       "touching_views": overlap}, f, indent=1)
            f.write("\n")
        extras["labels"] = "labels.json"
        extras["mask_dir"] = "masks"
    write_manifest(os.path.join(out_dir, "manifest.json"), cams, files, names, pts, cols, train, test,
                   extras=extras)
    save_scene(scene, os.path.join(out_dir, "gt_scene.tsp"))
    export_ply(scene, os.path.join(out_dir, "gt.ply"))
    return {"views": len(cams), "triangles": scene.n_triangles, "vertices": scene.n_vertices,
            "train": train, "test": test}


def _touch(a, b) -> bool:
    """True when two pixel masks overlap or are 4-adjacent."""
    near = b.copy()
    near[1:] |= b[:-1]
    near[:-1] |= b[1:]
    near[:, 1:] |= b[:, :-1]
    near[:, :-1] |= b[:, 1:]
    return bool((a & near).any())
