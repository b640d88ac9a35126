"""Tile-based forward renderer for soft, semi-transparent triangles.

Per view, every active triangle is projected, culled (behind the near
plane, degenerate, or off-screen) and binned into 16x16 pixel tiles. Each
tile's list is sorted front to back by the camera-space depth of the
triangle's 3D incenter (ties by triangle index) and every pixel composites
its list with the soft window ``ReLU(phi(p)/phi(s))**sigma``.

Pixel ``(x, y)`` is sampled at its center ``(x + 0.5, y + 0.5)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .geom2d import (DEGENERATE_AREA, WINDOW_EPS, barycentric, edge_functions, incenter,
                     project_points, signed_area2, triangle_sdf)
from .scene import NEAR_PLANE, Camera, Scene, map_opacity
from .sh import sh_basis

TILE = 16
T_MIN = 1e-4  # early-termination transmittance


@dataclass
class ViewContext:
    """Everything the backward pass needs to replay one view's forward pass."""

    cam: Camera
    sigma: float
    floor: float
    background: np.ndarray
    tri_ids: np.ndarray       # (K,) scene triangle slot of each visible triangle
    vidx: np.ndarray          # (K, 3) vertex indices
    q: np.ndarray             # (K, 3, 2) image-space vertices
    area2: np.ndarray         # (K,) twice the signed area
    normals: np.ndarray       # (K, 3, 2) outward edge normals
    offsets: np.ndarray       # (K, 3)
    inradius: np.ndarray      # (K,)
    depth: np.ndarray         # (K,)
    inc3d: np.ndarray         # (K, 3) world-space incenter
    view_vec: np.ndarray      # (K, 3) incenter - camera center (unnormalized)
    basis: np.ndarray         # (K, 16) SH basis at the view direction
    color_raw: np.ndarray     # (K, 3, 3) unclamped per-corner colors
    color: np.ndarray         # (K, 3, 3) clamped per-corner colors
    opacity: np.ndarray       # (K,) min vertex opacity
    argmin: np.ndarray        # (K,) slot of the minimizing corner
    tile_start: np.ndarray    # (n_tiles + 1,)
    pair_tri: np.ndarray      # (n_pairs,) local triangle index per tile entry
    n_tiles_x: int
    n_tiles_y: int

    @property
    def n_visible(self) -> int:
        return len(self.tri_ids)


@dataclass
class RenderOutput:
    color: np.ndarray                    # (H, W, 3)
    final_transmittance: np.ndarray      # (H, W)
    winner_id: np.ndarray                # (H, W) scene triangle slot, -1 for none
    per_triangle_max_weight: np.ndarray  # (M,) over all scene triangle slots
    ctx: ViewContext = None
    aa_scale: int = 1
    raw: np.ndarray = None               # accumulated features before post-processing


def _pixel_bbox(q, width, height):
    lo = q.min(axis=1)
    hi = q.max(axis=1)
    x0 = np.maximum(np.ceil(lo[:, 0] - 0.5), 0).astype(np.int64)
    y0 = np.maximum(np.ceil(lo[:, 1] - 0.5), 0).astype(np.int64)
    x1 = np.minimum(np.floor(hi[:, 0] - 0.5), width - 1).astype(np.int64)
    y1 = np.minimum(np.floor(hi[:, 1] - 0.5), height - 1).astype(np.int64)
    return x0, y0, x1, y1


def incenter3d(P):
    """Side-length weighted incenter of 3D triangles ``(K, 3, 3)``."""
    A, B, C = P[:, 0], P[:, 1], P[:, 2]
    a = np.linalg.norm(B - C, axis=1)
    b = np.linalg.norm(C - A, axis=1)
    c = np.linalg.norm(A - B, axis=1)
    s = np.maximum(a + b + c, 1e-300)
    return (a[:, None] * A + b[:, None] * B + c[:, None] * C) / s[:, None]


@nb.njit(cache=True)
def _bin_pairs(x0, y0, x1, y1, n_tiles_x):
    n = 0
    for k in range(len(x0)):
        n += (x1[k] // TILE - x0[k] // TILE + 1) * (y1[k] // TILE - y0[k] // TILE + 1)
    tiles = np.empty(n, dtype=np.int64)
    tris = np.empty(n, dtype=np.int64)
    m = 0
    for k in range(len(x0)):
        for ty in range(y0[k] // TILE, y1[k] // TILE + 1):
            for tx in range(x0[k] // TILE, x1[k] // TILE + 1):
                tiles[m] = ty * n_tiles_x + tx
                tris[m] = k
                m += 1
    return tiles, tris


def bin_triangles(x0, y0, x1, y1, depth, width, height):
    """Tile lists as CSR arrays, each list sorted by (depth, triangle index)."""
    ntx = (width + TILE - 1) // TILE
    nty = (height + TILE - 1) // TILE
    tiles, tris = _bin_pairs(x0, y0, x1, y1, ntx)
    order = np.lexsort((tris, depth[tris], tiles))
    tiles, tris = tiles[order], tris[order]
    start = np.searchsorted(tiles, np.arange(ntx * nty + 1)).astype(np.int64)
    return start, tris, ntx, nty


def prepare_view(scene: Scene, cam: Camera, sigma=None, floor=None, background=(0.0, 0.0, 0.0),
                 near: float = NEAR_PLANE) -> ViewContext:
    sigma = scene.sigma if sigma is None else float(sigma)
    floor = scene.floor if floor is None else float(floor)
    V, Tr = scene.vertices, scene.triangles
    tids = np.flatnonzero(Tr.active)
    vidx = Tr.indices[tids]
    q_all, _, front = project_points(V.positions, cam, near)
    q = q_all[vidx]
    area2 = signed_area2(q) if len(q) else np.zeros(0)
    ok = front[vidx].all(axis=1) & (np.abs(area2) * 0.5 >= DEGENERATE_AREA)
    x0, y0, x1, y1 = _pixel_bbox(q, cam.width, cam.height) if len(q) else (np.zeros(0, np.int64),) * 4
    ok &= (x0 <= x1) & (y0 <= y1)
    tids, vidx, q, area2 = tids[ok], vidx[ok], q[ok], area2[ok]
    x0, y0, x1, y1 = x0[ok], y0[ok], x1[ok], y1[ok]

    P = V.positions[vidx]
    inc = incenter3d(P) if len(P) else np.zeros((0, 3))
    depth = inc @ cam.rotation[2] + cam.translation[2]
    view_vec = inc - cam.center
    dirs = view_vec / np.linalg.norm(view_vec, axis=1, keepdims=True).clip(1e-300)
    basis = sh_basis(dirs)
    color_raw = 0.5 + np.einsum("kb,kjbc->kjc", basis, V.sh[vidx])
    o = map_opacity(V.opacity_logit, floor)[vidx] if len(vidx) else np.zeros((0, 3))
    argmin = np.argmin(o, axis=1) if len(o) else np.zeros(0, np.int64)
    opac = o[np.arange(len(o)), argmin]
    nrm, off = edge_functions(q) if len(q) else (np.zeros((0, 3, 2)), np.zeros((0, 3)))
    per = np.linalg.norm(q - np.roll(q, -1, axis=1), axis=2).sum(axis=1)
    rin = np.abs(area2) / np.maximum(per, 1e-300)
    start, pair_tri, ntx, nty = bin_triangles(x0, y0, x1, y1, depth, cam.width, cam.height)
    return ViewContext(
        cam=cam, sigma=sigma, floor=floor,
        background=np.asarray(background, dtype=np.float64).reshape(3),
        tri_ids=tids, vidx=vidx, q=np.ascontiguousarray(q), area2=area2,
        normals=np.ascontiguousarray(nrm), offsets=np.ascontiguousarray(off), inradius=rin,
        depth=depth, inc3d=inc, view_vec=view_vec, basis=basis,
        color_raw=color_raw, color=np.clip(color_raw, 0.0, 1.0),
        opacity=np.ascontiguousarray(opac), argmin=argmin,
        tile_start=start, pair_tri=pair_tri, n_tiles_x=ntx, n_tiles_y=nty)


def triangle_normals(ctx: ViewContext, positions) -> tuple[np.ndarray, np.ndarray]:
    """Unit geometric normals flipped to face the camera, plus the flip sign."""
    P = positions[ctx.vidx]
    u = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    n = u / np.linalg.norm(u, axis=1, keepdims=True).clip(1e-300)
    flip = np.where(np.sum(n * ctx.view_vec, axis=1) > 0, -1.0, 1.0)
    return n * flip[:, None], flip


@nb.njit(cache=True, parallel=True)
def _forward_kernel(q, normals, offsets, inradius, feat, opacity, sigma, bg,
                    tile_start, pair_tri, ntx, width, height):
    out = np.zeros((height, width, 3))
    T_out = np.ones((height, width))
    winner = np.full((height, width), -1, dtype=np.int64)
    pair_maxw = np.zeros(len(pair_tri))
    n_tiles = len(tile_start) - 1
    for tile in nb.prange(n_tiles):
        s0 = tile_start[tile]
        s1 = tile_start[tile + 1]
        tx0 = (tile % ntx) * TILE
        ty0 = (tile // ntx) * TILE
        for y in range(ty0, min(ty0 + TILE, height)):
            py = y + 0.5
            for x in range(tx0, min(tx0 + TILE, width)):
                px = x + 0.5
                T = 1.0
                c0 = 0.0
                c1 = 0.0
                c2 = 0.0
                best_w = 0.0
                best = -1
                for idx in range(s0, s1):
                    k = pair_tri[idx]
                    phi = normals[k, 0, 0] * px + normals[k, 0, 1] * py + offsets[k, 0]
                    for e in range(1, 3):
                        L = normals[k, e, 0] * px + normals[k, e, 1] * py + offsets[k, e]
                        if L > phi:
                            phi = L
                    r = -phi / inradius[k]
                    if r <= WINDOW_EPS:
                        continue
                    I = np.exp(sigma * np.log(r))
                    o = opacity[k]
                    alpha = o * I
                    A2 = (q[k, 1, 0] - q[k, 0, 0]) * (q[k, 2, 1] - q[k, 0, 1]) - \
                         (q[k, 1, 1] - q[k, 0, 1]) * (q[k, 2, 0] - q[k, 0, 0])
                    l0 = ((q[k, 1, 0] - px) * (q[k, 2, 1] - py) - (q[k, 1, 1] - py) * (q[k, 2, 0] - px)) / A2
                    l1 = ((q[k, 2, 0] - px) * (q[k, 0, 1] - py) - (q[k, 2, 1] - py) * (q[k, 0, 0] - px)) / A2
                    l2 = ((q[k, 0, 0] - px) * (q[k, 1, 1] - py) - (q[k, 0, 1] - py) * (q[k, 1, 0] - px)) / A2
                    w = T * alpha
                    c0 += w * (l0 * feat[k, 0, 0] + l1 * feat[k, 1, 0] + l2 * feat[k, 2, 0])
                    c1 += w * (l0 * feat[k, 0, 1] + l1 * feat[k, 1, 1] + l2 * feat[k, 2, 1])
                    c2 += w * (l0 * feat[k, 0, 2] + l1 * feat[k, 1, 2] + l2 * feat[k, 2, 2])
                    if w > best_w:
                        best_w = w
                        best = k
                    tw = T * o
                    if tw > pair_maxw[idx]:
                        pair_maxw[idx] = tw
                    T *= 1.0 - alpha
                    if T < T_MIN:
                        break
                out[y, x, 0] = c0 + T * bg[0]
                out[y, x, 1] = c1 + T * bg[1]
                out[y, x, 2] = c2 + T * bg[2]
                T_out[y, x] = T
                winner[y, x] = best
    return out, T_out, winner, pair_maxw


def _run_forward(ctx: ViewContext, feat, bg, M: int):
    cam = ctx.cam
    out, T, win_local, pair_maxw = _forward_kernel(
        ctx.q, ctx.normals, ctx.offsets, ctx.inradius, np.ascontiguousarray(feat),
        ctx.opacity, float(ctx.sigma), np.asarray(bg, dtype=np.float64),
        ctx.tile_start, ctx.pair_tri, ctx.n_tiles_x, cam.width, cam.height)
    winner = np.where(win_local >= 0, ctx.tri_ids[np.maximum(win_local, 0)], -1) \
        if ctx.n_visible else np.full_like(win_local, -1)
    local_max = np.zeros(ctx.n_visible)
    np.maximum.at(local_max, ctx.pair_tri, pair_maxw)
    maxw = np.zeros(M)
    maxw[ctx.tri_ids] = local_max
    return out, T, winner, maxw


def render(scene: Scene, cam: Camera, sigma=None, floor=None, background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Composite the scene from ``cam`` at the camera's native resolution."""
    ctx = prepare_view(scene, cam, sigma, floor, background)
    out, T, winner, maxw = _run_forward(ctx, ctx.color, ctx.background, len(scene.triangles))
    return RenderOutput(out, T, winner, maxw, ctx, 1, out)


def downsample(img, s: int):
    """Exact ``s x s`` box average."""
    if s == 1:
        return img
    H, W = img.shape[0] // s, img.shape[1] // s
    return img.reshape((H, s, W, s) + img.shape[2:]).mean(axis=(1, 3))


def render_aa(scene: Scene, cam: Camera, aa_scale: int = 1, sigma=None, floor=None,
              background=(0.0, 0.0, 0.0)) -> RenderOutput:
    """Render at ``aa_scale`` times the resolution and box-downsample."""
    aa_scale = int(aa_scale)
    if aa_scale < 1:
        raise ValueError("aa_scale must be a positive integer")
    if aa_scale == 1:
        return render(scene, cam, sigma, floor, background)
    hi = render(scene, cam.scaled(aa_scale), sigma, floor, background)
    return RenderOutput(
        color=downsample(hi.color, aa_scale),
        final_transmittance=downsample(hi.final_transmittance, aa_scale),
        winner_id=np.ascontiguousarray(hi.winner_id[::aa_scale, ::aa_scale]),
        per_triangle_max_weight=hi.per_triangle_max_weight,
        ctx=hi.ctx, aa_scale=aa_scale, raw=hi.color)


def render_normals(scene: Scene, cam: Camera, aa_scale: int = 1, sigma=None, floor=None) -> RenderOutput:
    """Composite camera-facing world normals with the color weights; renormalized.

    ``raw`` on the result holds the accumulated (unnormalized) normals at
    output resolution.
    """
    c = cam.scaled(aa_scale) if aa_scale > 1 else cam
    ctx = prepare_view(scene, c, sigma, floor)
    n, _ = triangle_normals(ctx, scene.vertices.positions)
    feat = np.repeat(n[:, None, :], 3, axis=1)
    acc, T, winner, maxw = _run_forward(ctx, feat, np.zeros(3), len(scene.triangles))
    acc = downsample(acc, aa_scale)
    norm = np.linalg.norm(acc, axis=2, keepdims=True)
    out = np.where(norm > 1e-6, acc / np.maximum(norm, 1e-300), 0.0)
    return RenderOutput(out, downsample(T, aa_scale), np.ascontiguousarray(winner[::aa_scale, ::aa_scale]),
                        maxw, ctx, aa_scale, acc)


def composite_pixel(contributions, background=(0.0, 0.0, 0.0)):
    """Front-to-back compositing of ``(color, opacity, window)`` triples.

    Returns ``(C, T_final, weights)`` where ``weights`` holds ``T_n * o_n * I_n``
    for every processed contribution; ``sum(weights) + T_final == 1``.
    """
    bg = np.asarray(background, dtype=np.float64)
    C = np.zeros(3)
    T = 1.0
    weights = []
    for color, o, I in contributions:
        alpha = o * I
        w = T * alpha
        C = C + w * np.asarray(color, dtype=np.float64)
        weights.append(w)
        T *= 1.0 - alpha
        if T < T_MIN:
            break
    return C + T * bg, T, weights


def render_reference(scene: Scene, cam: Camera, sigma=None, floor=None, background=(0.0, 0.0, 0.0)):
    """Naive renderer: one global depth sort, every pixel against every triangle.

    Slow and tile-free; exists as an independent oracle for the tile path.
    Returns ``(color, final_transmittance, winner_id)``.
    """
    sigma = scene.sigma if sigma is None else sigma
    floor = scene.floor if floor is None else floor
    W, H = cam.width, cam.height
    ys, xs = np.mgrid[0:H, 0:W]
    pix = np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=1)
    V = scene.vertices
    o_v = map_opacity(V.opacity_logit, floor)
    center = cam.center
    entries = []
    for m in np.flatnonzero(scene.triangles.active):
        vid = scene.triangles.indices[m]
        q, z, front = project_points(V.positions[vid], cam)
        if not front.all() or abs(signed_area2(q)) * 0.5 < DEGENERATE_AREA:
            continue
        P = V.positions[vid]
        side = np.array([np.linalg.norm(P[1] - P[2]), np.linalg.norm(P[2] - P[0]), np.linalg.norm(P[0] - P[1])])
        inc = side @ P / side.sum()
        depth = (cam.rotation @ inc + cam.translation)[2]
        d = (inc - center) / np.linalg.norm(inc - center)
        cols = np.clip(0.5 + np.einsum("b,jbc->jc", sh_basis(d), V.sh[vid]), 0, 1)
        entries.append((depth, m, q, cols, o_v[vid].min()))
    entries.sort(key=lambda e: (e[0], e[1]))
    C = np.zeros((len(pix), 3))
    T = np.ones(len(pix))
    alive = np.ones(len(pix), dtype=bool)
    best_w = np.zeros(len(pix))
    winner = np.full(len(pix), -1, dtype=np.int64)
    for _, m, q, cols, o in entries:
        phi = triangle_sdf(q, pix)
        _, phi_s = incenter(q)
        inside = (phi / phi_s > WINDOW_EPS) & alive
        if not inside.any():
            continue
        r = phi[inside] / phi_s
        I = r ** sigma
        lam = barycentric(q, pix[inside])
        w = T[inside] * o * I
        C[inside] += w[:, None] * (lam @ cols)
        better = w > best_w[inside]
        sel = np.flatnonzero(inside)[better]
        best_w[sel] = w[better]
        winner[sel] = m
        T[inside] *= 1.0 - o * I
        alive &= T >= T_MIN
    C += T[:, None] * np.asarray(background, dtype=np.float64)
    return C.reshape(H, W, 3), T.reshape(H, W), winner.reshape(H, W)


@nb.njit(cache=True)
def _zbuffer_kernel(q, normals, offsets, inradius, feat, depth, sigma, width, height):
    zbuf = np.full((height, width), np.inf)
    ids = np.full((height, width), -1, dtype=np.int64)
    out = np.zeros((height, width, 3))
    for k in range(len(depth)):
        lox = min(q[k, 0, 0], q[k, 1, 0], q[k, 2, 0])
        hix = max(q[k, 0, 0], q[k, 1, 0], q[k, 2, 0])
        loy = min(q[k, 0, 1], q[k, 1, 1], q[k, 2, 1])
        hiy = max(q[k, 0, 1], q[k, 1, 1], q[k, 2, 1])
        x0 = max(int(np.ceil(lox - 0.5)), 0)
        x1 = min(int(np.floor(hix - 0.5)), width - 1)
        y0 = max(int(np.ceil(loy - 0.5)), 0)
        y1 = min(int(np.floor(hiy - 0.5)), height - 1)
        A2 = (q[k, 1, 0] - q[k, 0, 0]) * (q[k, 2, 1] - q[k, 0, 1]) - \
             (q[k, 1, 1] - q[k, 0, 1]) * (q[k, 2, 0] - q[k, 0, 0])
        for y in range(y0, y1 + 1):
            py = y + 0.5
            for x in range(x0, x1 + 1):
                px = x + 0.5
                if depth[k] >= zbuf[y, x]:
                    continue
                phi = -np.inf
                for e in range(3):
                    L = normals[k, e, 0] * px + normals[k, e, 1] * py + offsets[k, e]
                    if L > phi:
                        phi = L
                r = -phi / inradius[k]
                if r <= WINDOW_EPS:
                    continue
                I = np.exp(sigma * np.log(r))
                l0 = ((q[k, 1, 0] - px) * (q[k, 2, 1] - py) - (q[k, 1, 1] - py) * (q[k, 2, 0] - px)) / A2
                l1 = ((q[k, 2, 0] - px) * (q[k, 0, 1] - py) - (q[k, 2, 1] - py) * (q[k, 0, 0] - px)) / A2
                l2 = 1.0 - l0 - l1
                zbuf[y, x] = depth[k]
                ids[y, x] = k
                for ch in range(3):
                    out[y, x, ch] = I * (l0 * feat[k, 0, ch] + l1 * feat[k, 1, ch] + l2 * feat[k, 2, ch])
    return out, ids


def render_opaque(scene: Scene, cam: Camera, sigma=None, background=(0.0, 0.0, 0.0)):
    """Depth-test renderer for the fully opaque regime: first hit wins, ``C = c * I``.

    Returns ``(color, winner_id)``.
    """
    ctx = prepare_view(scene, cam, sigma, 1.0, background)
    out, ids = _zbuffer_kernel(ctx.q, ctx.normals, ctx.offsets, ctx.inradius, ctx.color,
                               ctx.depth, float(ctx.sigma), cam.width, cam.height)
    empty = ids < 0
    out[empty] = ctx.background
    winner = np.where(empty, -1, ctx.tri_ids[np.maximum(ids, 0)] if ctx.n_visible else -1)
    return out, winner
