"""Analytic reverse pass of the renderer.

The backward kernel replays each pixel's front-to-back list (no fragment
storage), keeps the prefix transmittances in a per-tile scratch buffer and
sweeps back to front with the suffix color

    A_n = c_n a_n + (1 - a_n) A_{n+1},   A_{N+1} = background

so that ``dC/da_n = T_n (c_n - A_{n+1})`` without dividing by ``1 - a_n``
(which is singular for opaque triangles).

Gradients are written into one row per (tile, triangle) entry, so tiles
never share memory; the per-triangle reduction afterwards is a fixed-order
sum and therefore independent of the number of worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .geom2d import WINDOW_EPS
from .raster import TILE, T_MIN, RenderOutput, ViewContext, triangle_normals
from .scene import Scene, map_opacity_grad
from .sh import sh_basis_jacobian

# per-entry gradient row layout
_DQ = 0      # 6: d/dq (x0, y0, x1, y1, x2, y2)
_DO = 6      # triangle opacity
_DF = 7      # 9: per-corner feature (corner-major)
_DS = 16     # sigma
_ROW = 17


@dataclass
class GradientBuffer:
    d_positions: np.ndarray
    d_sh: np.ndarray
    d_opacity_logit: np.ndarray
    d_sigma: float = 0.0

    @classmethod
    def zeros(cls, n: int) -> "GradientBuffer":
        return cls(np.zeros((n, 3)), np.zeros((n, 16, 3)), np.zeros(n), 0.0)

    def __iadd__(self, other: "GradientBuffer"):
        self.d_positions += other.d_positions
        self.d_sh += other.d_sh
        self.d_opacity_logit += other.d_opacity_logit
        self.d_sigma += other.d_sigma
        return self

    def zero_(self):
        self.d_positions[:] = 0
        self.d_sh[:] = 0
        self.d_opacity_logit[:] = 0
        self.d_sigma = 0.0

    def all_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.d_positions)) and np.all(np.isfinite(self.d_sh))
                    and np.all(np.isfinite(self.d_opacity_logit)) and np.isfinite(self.d_sigma))


@nb.njit(cache=True, parallel=True)
def _backward_kernel(q, normals, offsets, inradius, feat, opacity, sigma, bg,
                     tile_start, pair_tri, ntx, width, height, dimg):
    grads = np.zeros((len(pair_tri), _ROW))
    n_tiles = len(tile_start) - 1
    for tile in nb.prange(n_tiles):
        s0 = tile_start[tile]
        s1 = tile_start[tile + 1]
        n_max = s1 - s0
        if n_max == 0:
            continue
        st_idx = np.empty(n_max, dtype=np.int64)
        st_edge = np.empty(n_max, dtype=np.int64)
        st_T = np.empty(n_max)
        st_a = np.empty(n_max)
        st_I = np.empty(n_max)
        st_r = np.empty(n_max)
        st_l = np.empty((n_max, 3))
        st_c = np.empty((n_max, 3))
        tx0 = (tile % ntx) * TILE
        ty0 = (tile // ntx) * TILE
        for y in range(ty0, min(ty0 + TILE, height)):
            py = y + 0.5
            for x in range(tx0, min(tx0 + TILE, width)):
                g0 = dimg[y, x, 0]
                g1 = dimg[y, x, 1]
                g2 = dimg[y, x, 2]
                if g0 == 0.0 and g1 == 0.0 and g2 == 0.0:
                    continue
                px = x + 0.5
                # replay the forward pass
                T = 1.0
                n = 0
                for idx in range(s0, s1):
                    k = pair_tri[idx]
                    phi = -np.inf
                    edge = 0
                    for e in range(3):
                        L = normals[k, e, 0] * px + normals[k, e, 1] * py + offsets[k, e]
                        if L > phi:
                            phi = L
                            edge = e
                    r = -phi / inradius[k]
                    if r <= WINDOW_EPS:
                        continue
                    I = np.exp(sigma * np.log(r))
                    alpha = opacity[k] * I
                    A2 = (q[k, 1, 0] - q[k, 0, 0]) * (q[k, 2, 1] - q[k, 0, 1]) - \
                         (q[k, 1, 1] - q[k, 0, 1]) * (q[k, 2, 0] - q[k, 0, 0])
                    l0 = ((q[k, 1, 0] - px) * (q[k, 2, 1] - py) - (q[k, 1, 1] - py) * (q[k, 2, 0] - px)) / A2
                    l1 = ((q[k, 2, 0] - px) * (q[k, 0, 1] - py) - (q[k, 2, 1] - py) * (q[k, 0, 0] - px)) / A2
                    l2 = ((q[k, 0, 0] - px) * (q[k, 1, 1] - py) - (q[k, 0, 1] - py) * (q[k, 1, 0] - px)) / A2
                    st_idx[n] = idx
                    st_edge[n] = edge
                    st_T[n] = T
                    st_a[n] = alpha
                    st_I[n] = I
                    st_r[n] = r
                    st_l[n, 0] = l0
                    st_l[n, 1] = l1
                    st_l[n, 2] = l2
                    for ch in range(3):
                        st_c[n, ch] = l0 * feat[k, 0, ch] + l1 * feat[k, 1, ch] + l2 * feat[k, 2, ch]
                    n += 1
                    T *= 1.0 - alpha
                    if T < T_MIN:
                        break
                # reverse sweep
                a0 = bg[0]
                a1 = bg[1]
                a2 = bg[2]
                for m in range(n - 1, -1, -1):
                    idx = st_idx[m]
                    k = pair_tri[idx]
                    Tm = st_T[m]
                    alpha = st_a[m]
                    c0 = st_c[m, 0]
                    c1 = st_c[m, 1]
                    c2 = st_c[m, 2]
                    d_alpha = Tm * (g0 * (c0 - a0) + g1 * (c1 - a1) + g2 * (c2 - a2))
                    wgt = Tm * alpha
                    dc0 = wgt * g0
                    dc1 = wgt * g1
                    dc2 = wgt * g2
                    a0 = c0 * alpha + (1.0 - alpha) * a0
                    a1 = c1 * alpha + (1.0 - alpha) * a1
                    a2 = c2 * alpha + (1.0 - alpha) * a2

                    row = grads[idx]
                    I = st_I[m]
                    r = st_r[m]
                    o = opacity[k]
                    row[_DO] += d_alpha * I
                    dI = d_alpha * o
                    row[_DS] += dI * I * np.log(r)
                    dr = dI * sigma * I / r

                    # corner features and barycentric weights
                    A2 = (q[k, 1, 0] - q[k, 0, 0]) * (q[k, 2, 1] - q[k, 0, 1]) - \
                         (q[k, 1, 1] - q[k, 0, 1]) * (q[k, 2, 0] - q[k, 0, 0])
                    dA2 = np.zeros(6)
                    for i in range(3):
                        i1 = (i + 1) % 3
                        i2 = (i + 2) % 3
                        dA2[2 * i] = q[k, i1, 1] - q[k, i2, 1]
                        dA2[2 * i + 1] = q[k, i2, 0] - q[k, i1, 0]
                    lam_dot = 0.0
                    for j in range(3):
                        lj = st_l[m, j]
                        row[_DF + 3 * j] += lj * dc0
                        row[_DF + 3 * j + 1] += lj * dc1
                        row[_DF + 3 * j + 2] += lj * dc2
                        dlam = feat[k, j, 0] * dc0 + feat[k, j, 1] * dc1 + feat[k, j, 2] * dc2
                        if dlam == 0.0:
                            continue
                        lam_dot += dlam * lj
                        # N_j = cross(q[j+1] - p, q[j+2] - p)
                        j1 = (j + 1) % 3
                        j2 = (j + 2) % 3
                        ux = q[k, j1, 0] - px
                        uy = q[k, j1, 1] - py
                        wx = q[k, j2, 0] - px
                        wy = q[k, j2, 1] - py
                        row[_DQ + 2 * j1] += dlam * wy / A2
                        row[_DQ + 2 * j1 + 1] += -dlam * wx / A2
                        row[_DQ + 2 * j2] += -dlam * uy / A2
                        row[_DQ + 2 * j2 + 1] += dlam * ux / A2
                    for i in range(6):
                        row[_DQ + i] -= lam_dot * dA2[i] / A2

                    if dr != 0.0:
                        # r = -L_e(p) / rin ; rin = s * A2 / perimeter
                        s = 1.0 if A2 > 0 else -1.0
                        rin = inradius[k]
                        per = 0.0
                        for i in range(3):
                            i1 = (i + 1) % 3
                            per += np.hypot(q[k, i1, 0] - q[k, i, 0], q[k, i1, 1] - q[k, i, 1])
                        # d rin / dq
                        drin = np.zeros(6)
                        for i in range(6):
                            drin[i] = s * dA2[i] / per
                        for i in range(3):
                            i1 = (i + 1) % 3
                            ex = q[k, i1, 0] - q[k, i, 0]
                            ey = q[k, i1, 1] - q[k, i, 1]
                            ln = np.hypot(ex, ey)
                            ux = ex / ln
                            uy = ey / ln
                            drin[2 * i1] -= rin * ux / per
                            drin[2 * i1 + 1] -= rin * uy / per
                            drin[2 * i] += rin * ux / per
                            drin[2 * i + 1] += rin * uy / per
                        # d L_e / dq for the active edge a -> b
                        e = st_edge[m]
                        e1 = (e + 1) % 3
                        ax = q[k, e, 0]
                        ay = q[k, e, 1]
                        ex = q[k, e1, 0] - ax
                        ey = q[k, e1, 1] - ay
                        wx = px - ax
                        wy = py - ay
                        ln = np.hypot(ex, ey)
                        ux = ex / ln
                        uy = ey / ln
                        Lv = -r * rin
                        dLax = -s * (ey - wy) / ln + Lv * ux / ln
                        dLay = -s * (wx - ex) / ln + Lv * uy / ln
                        dLbx = -s * wy / ln - Lv * ux / ln
                        dLby = s * wx / ln - Lv * uy / ln
                        # dr = (-dL - r * drin) / rin
                        for i in range(6):
                            row[_DQ + i] += dr * (-r * drin[i]) / rin
                        row[_DQ + 2 * e] += dr * (-dLax) / rin
                        row[_DQ + 2 * e + 1] += dr * (-dLay) / rin
                        row[_DQ + 2 * e1] += dr * (-dLbx) / rin
                        row[_DQ + 2 * e1 + 1] += dr * (-dLby) / rin
    return grads


def _reduce(ctx: ViewContext, pair_grads):
    K = ctx.n_visible
    tri = np.zeros((K, _ROW))
    np.add.at(tri, ctx.pair_tri, pair_grads)
    return tri


def _image_backward(ctx: ViewContext, feat, bg, dimg):
    cam = ctx.cam
    if ctx.n_visible == 0:
        return np.zeros((0, _ROW))
    pair = _backward_kernel(ctx.q, ctx.normals, ctx.offsets, ctx.inradius,
                            np.ascontiguousarray(feat), ctx.opacity, float(ctx.sigma),
                            np.asarray(bg, dtype=np.float64), ctx.tile_start, ctx.pair_tri,
                            ctx.n_tiles_x, cam.width, cam.height,
                            np.ascontiguousarray(dimg, dtype=np.float64))
    return _reduce(ctx, pair)


def _projection_vjp(ctx: ViewContext, positions, dq):
    """Map ``dL/dq`` (K, 3, 2) to ``dL/dv`` (K, 3, 3) through the pinhole model."""
    cam = ctx.cam
    X = positions[ctx.vidx] @ cam.rotation.T + cam.translation
    z = X[..., 2]
    gx, gy = dq[..., 0], dq[..., 1]
    dX = np.stack([gx * cam.fx / z, gy * cam.fy / z,
                   -(gx * cam.fx * X[..., 0] + gy * cam.fy * X[..., 1]) / z ** 2], axis=-1)
    return dX @ cam.rotation


def _incenter3d_vjp(P, inc, g):
    """``dL/dP`` (K, 3, 3) for the side-length weighted 3D incenter, given ``dL/dinc``."""
    A, B, C = P[:, 0], P[:, 1], P[:, 2]
    a = np.linalg.norm(B - C, axis=1)[:, None]
    b = np.linalg.norm(C - A, axis=1)[:, None]
    c = np.linalg.norm(A - B, axis=1)[:, None]
    S = a + b + c
    # inc = (aA + bB + cC) / S ; d inc / d(length) = (vertex - inc) / S
    ga = np.sum((A - inc) * g, axis=1, keepdims=True) / S
    gb = np.sum((B - inc) * g, axis=1, keepdims=True) / S
    gc = np.sum((C - inc) * g, axis=1, keepdims=True) / S
    ua = (B - C) / a
    ub = (C - A) / b
    uc = (A - B) / c
    dA = a * g / S - ub * gb + uc * gc
    dB = b * g / S + ua * ga - uc * gc
    dC = c * g / S - ua * ga + ub * gb
    return np.stack([dA, dB, dC], axis=1)


def _scatter_geometry(scene: Scene, ctx: ViewContext, tri, buf: GradientBuffer, feature_grad_fn):
    """Push per-triangle geometry/opacity/sigma grads onto the vertices."""
    pos = scene.vertices.positions
    dq = tri[:, _DQ:_DQ + 6].reshape(-1, 3, 2)
    dv = _projection_vjp(ctx, pos, dq)
    np.add.at(buf.d_positions, ctx.vidx, dv)
    # triangle opacity -> first minimizing vertex logit
    vmin = ctx.vidx[np.arange(ctx.n_visible), ctx.argmin]
    dlogit = tri[:, _DO] * map_opacity_grad(scene.vertices.opacity_logit[vmin], ctx.floor)
    np.add.at(buf.d_opacity_logit, vmin, dlogit)
    buf.d_sigma += float(tri[:, _DS].sum())
    feature_grad_fn(tri[:, _DF:_DF + 9].reshape(-1, 3, 3))


def _color_features_backward(scene: Scene, ctx: ViewContext, dfeat, buf: GradientBuffer):
    """Clamped SH color per corner -> SH coefficients and (via view direction) positions."""
    live = (ctx.color_raw > 0.0) & (ctx.color_raw < 1.0)
    draw = np.where(live, dfeat, 0.0)
    # color_raw[k, j, c] = 0.5 + sum_b basis[k, b] * sh[v_kj, b, c]
    dsh = np.einsum("kb,kjc->kjbc", ctx.basis, draw)
    np.add.at(buf.d_sh, ctx.vidx, dsh)
    sh = scene.vertices.sh[ctx.vidx]  # K, 3, 16, 3
    dbasis = np.einsum("kjc,kjbc->kb", draw, sh)
    if not np.any(dbasis[:, 1:]):
        return
    vv = ctx.view_vec
    nrm = np.linalg.norm(vv, axis=1, keepdims=True)
    d = vv / nrm
    J = sh_basis_jacobian(d)
    gd = np.einsum("kb,kbi->ki", dbasis, J)
    gv = (gd - d * np.sum(d * gd, axis=1, keepdims=True)) / nrm
    P = scene.vertices.positions[ctx.vidx]
    dP = _incenter3d_vjp(P, ctx.inc3d, gv)
    np.add.at(buf.d_positions, ctx.vidx, dP)


def _upsample_grad(dimg, s):
    if s == 1:
        return dimg
    return np.repeat(np.repeat(dimg, s, axis=0), s, axis=1) / (s * s)


def backward(scene: Scene, out: RenderOutput, d_color, buf: GradientBuffer = None) -> GradientBuffer:
    """Accumulate ``dL/dparams`` given ``dL/d out.color`` into ``buf``."""
    if out.ctx is None:
        raise ValueError("render output carries no forward context; re-render with the tile renderer")
    if buf is None:
        buf = GradientBuffer.zeros(len(scene.vertices))
    ctx = out.ctx
    d_color = np.asarray(d_color, dtype=np.float64)
    if d_color.shape != out.color.shape:
        raise ValueError(f"gradient shape {d_color.shape} != image shape {out.color.shape}")
    if not np.any(d_color) or ctx.n_visible == 0:
        return buf
    dimg = _upsample_grad(d_color, out.aa_scale)
    tri = _image_backward(ctx, ctx.color, ctx.background, dimg)
    _scatter_geometry(scene, ctx, tri, buf, lambda df: _color_features_backward(scene, ctx, df, buf))
    return buf


def backward_normals(scene: Scene, out: RenderOutput, d_normals, buf: GradientBuffer = None) -> GradientBuffer:
    """Backward through :func:`raster.render_normals` (renormalization included)."""
    if buf is None:
        buf = GradientBuffer.zeros(len(scene.vertices))
    ctx = out.ctx
    if ctx.n_visible == 0 or not np.any(d_normals):
        return buf
    acc = out.raw
    norm = np.linalg.norm(acc, axis=2, keepdims=True)
    nhat = acc / np.maximum(norm, 1e-300)
    dacc = np.where(norm > 1e-6, (d_normals - nhat * np.sum(nhat * d_normals, axis=2, keepdims=True))
                    / np.maximum(norm, 1e-300), 0.0)
    dimg = _upsample_grad(dacc, out.aa_scale)
    pos = scene.vertices.positions
    n, flip = triangle_normals(ctx, pos)
    feat = np.repeat(n[:, None, :], 3, axis=1)
    tri = _image_backward(ctx, feat, np.zeros(3), dimg)

    def normal_grad(dfeat):
        gn = dfeat.sum(axis=1) * flip[:, None]
        P = pos[ctx.vidx]
        e1 = P[:, 1] - P[:, 0]
        e2 = P[:, 2] - P[:, 0]
        u = np.cross(e1, e2)
        un = np.linalg.norm(u, axis=1, keepdims=True)
        uh = u / un
        gu = (gn - uh * np.sum(uh * gn, axis=1, keepdims=True)) / un
        dB = np.cross(e2, gu)
        dC = np.cross(gu, e1)
        np.add.at(buf.d_positions, ctx.vidx, np.stack([-dB - dC, dB, dC], axis=1))

    _scatter_geometry(scene, ctx, tri, buf, normal_grad)
    return buf
