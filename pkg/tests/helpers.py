"""Shared builders for the test suite: random scenes, cameras and a kink-aware
finite-difference checker for the renderer gradients."""

from __future__ import annotations

import numpy as np

from trisplat.raster import T_MIN, prepare_view, render
from trisplat.scene import Camera, Scene

KINK_PX = 1e-2


def front_camera(size=32, dist=4.0, focal=None, eye=None):
    focal = 0.9 * size if focal is None else focal
    eye = (0.0, 0.0, -dist) if eye is None else eye
    return Camera.look_at(eye, (0.0, 0.0, 0.0), (0.0, -1.0, 0.0), focal, focal, size, size)


def random_scene(rng, n_tris=5, sigma=0.5, floor=0.0, shared=True, sh_scale=0.1, spread=0.9, size=0.6):
    """Random triangles in front of :func:`front_camera`; some share vertices when ``shared``."""
    P, idx = [], []
    for t in range(n_tris):
        if shared and t > 0 and rng.random() < 0.4:
            # reuse an edge of an earlier triangle and add one new vertex
            a, b = idx[rng.integers(len(idx))][:2]
            c = (P[a] + P[b]) / 2 + rng.normal(0, size, 3) * np.array([1.0, 1.0, 0.3])
            P.append(c)
            idx.append([a, b, len(P) - 1])
            continue
        c = rng.uniform(-spread, spread, 3) * np.array([1.0, 1.0, 0.5])
        for _ in range(3):
            P.append(c + rng.normal(0, size, 3) * np.array([1.0, 1.0, 0.3]))
        idx.append([len(P) - 3, len(P) - 2, len(P) - 1])
    P = np.array(P)
    n = len(P)
    sh = rng.normal(0, sh_scale, (n, 16, 3))
    logit = rng.normal(0, 1.0, n)
    return Scene.from_arrays(P, np.array(idx), sh, logit, sigma=sigma, floor=floor)


# ----------------------------------------------------------------------------- kink detection
def _pixel_grid(cam):
    ys, xs = np.mgrid[0:cam.height, 0:cam.width]
    return np.stack([xs + 0.5, ys + 0.5], axis=-1)


def structure(scene, cam, sigma=None):
    """Discrete state of a forward pass; the rendered image is smooth while it stays fixed.

    Returns ``(key, phi, gap)``: a tuple of arrays that must not change
    across a finite-difference stencil, the SDF of every visible triangle at
    every pixel ``(K, H, W)``, and the gap between the two largest edge
    functions (distance to the SDF ridge) at every pixel.
    """
    ctx = prepare_view(scene, cam, sigma)
    pix = _pixel_grid(cam)
    K = ctx.n_visible
    if K == 0:
        return (ctx.tri_ids,), np.zeros((0,) + pix.shape[:2]), np.zeros((0,) + pix.shape[:2])
    L = np.einsum("hwc,kec->kehw", pix, ctx.normals) + ctx.offsets[:, :, None, None]
    Ls = np.sort(L, axis=1)
    phi = Ls[:, 2]
    gap = Ls[:, 2] - Ls[:, 1]
    arg = np.argmax(L, axis=1)
    inside = phi < 0
    r = np.where(inside, -phi / ctx.inradius[:, None, None], 0.0)
    I = np.where(inside, np.power(np.where(inside, r, 1.0), ctx.sigma), 0.0)
    order = np.lexsort((np.arange(K), ctx.depth))
    alpha = (ctx.opacity[:, None, None] * I)[order]
    T = np.cumprod(1.0 - alpha, axis=0)
    stop = np.where((T < T_MIN).any(axis=0), np.argmax(T < T_MIN, axis=0), K)
    clamp = (ctx.color_raw < 0) | (ctx.color_raw > 1)
    key = (ctx.tri_ids, ctx.tri_ids[order], ctx.argmin, clamp, inside, np.where(inside, arg, -1), stop)
    return key, phi, gap


def same_structure(a, b) -> bool:
    return len(a) == len(b) and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))


def near_kink(scene, cam, sigma, tri_slots, tol=KINK_PX) -> bool:
    """True when a pixel lies within ``tol`` px of an edge or ridge of one of ``tri_slots``."""
    ctx = prepare_view(scene, cam, sigma)
    _, phi, gap = structure(scene, cam, sigma)
    sel = np.isin(ctx.tri_ids, np.asarray(list(tri_slots), dtype=np.int64))
    if not sel.any():
        return False
    phi, gap = phi[sel], gap[sel]
    near_edge = np.abs(phi) < tol
    near_ridge = (phi < 0) & (gap < tol)
    return bool(near_edge.any() or near_ridge.any())


def linear_loss(scene, cam, weights, sigma=None):
    return float(np.sum(render(scene, cam, sigma).color * weights))


def perturbed(scene, kind, index, delta):
    s = scene.copy()
    if kind == "position":
        s.vertices.positions[index] += delta
    elif kind == "sh":
        s.vertices.sh[index] += delta
    elif kind == "opacity":
        s.vertices.opacity_logit[index] += delta
    elif kind == "sigma":
        s.sigma += delta
    else:
        raise ValueError(kind)
    return s


def _central(scene, cam, weights, kind, index, eps):
    sp, sm = perturbed(scene, kind, index, eps), perturbed(scene, kind, index, -eps)
    return (linear_loss(sp, cam, weights) - linear_loss(sm, cam, weights)) / (2 * eps)


def fd_probe(scene, cam, weights, kind, index, eps=1e-4):
    """Central difference plus a flag saying whether the stencil is free of kinks.

    The difference is Richardson-extrapolated from steps ``eps`` and
    ``eps / 2`` so that truncation error near steep window edges at small
    sigma stays well below the comparison tolerance.
    """
    sp, sm = perturbed(scene, kind, index, eps), perturbed(scene, kind, index, -eps)
    k0 = structure(scene, cam)[0]
    smooth = same_structure(k0, structure(sp, cam)[0]) and same_structure(k0, structure(sm, cam)[0])
    if smooth and kind == "position":
        v = index[0]
        tris = np.flatnonzero((scene.triangles.indices == v).any(axis=1) & scene.triangles.active)
        smooth = not any(near_kink(s, cam, None, tris) for s in (scene, sp, sm))
    d1 = _central(scene, cam, weights, kind, index, eps)
    d2 = _central(scene, cam, weights, kind, index, eps / 2)
    return (4 * d2 - d1) / 3, smooth


def grad_close(analytic, fd, rtol=1e-3, atol=1e-6) -> bool:
    return abs(analytic - fd) <= max(atol, rtol * max(abs(analytic), abs(fd)))


# ----------------------------------------------------------------------------- training fixtures
def tiny_dataset(seed=0, n_views=6, size=24, n_tris=6, n_points=40):
    """In-memory dataset rendered from a random opaque scene; points sampled near it."""
    from trisplat.io.dataset import SceneDataset
    from trisplat.raster import render_aa

    rng = np.random.default_rng(seed)
    gt = random_scene(rng, n_tris, sigma=1e-4, floor=1.0, shared=False, sh_scale=0.15, size=0.5)
    cams = []
    for k in range(n_views):
        a = 2 * np.pi * k / n_views
        eye = (1.2 * np.sin(a), 0.6 * np.cos(a), -4.0)
        cams.append(Camera.look_at(eye, (0, 0, 0), (0, -1, 0), 0.9 * size, 0.9 * size, size, size))
    imgs = [render_aa(gt, c, 2).color for c in cams]
    P = gt.vertices.positions
    pts = np.concatenate([P, rng.uniform(P.min(0), P.max(0), (n_points - len(P), 3))])
    names = [f"v{k}" for k in range(n_views)]
    return SceneDataset(cams, [""] * n_views, names, pts, None, list(range(1, n_views)), [0],
                        images=imgs, normals=[None] * n_views), gt
