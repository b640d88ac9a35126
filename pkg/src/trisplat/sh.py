"""Degree-3 real spherical harmonics for view-dependent vertex colors.

Sign and normalization follow the convention common in splatting code
(orthonormal on the unit sphere, Condon-Shortley phase on the odd-m
terms). Color is ``0.5 + sum_b Y_b(d) * coeff_b`` per channel.
"""

from __future__ import annotations

import numpy as np

C0 = 0.28209479177387814
C1 = 0.4886025119029199
C2 = (1.0925484305920792, -1.0925484305920792, 0.31539156525252005,
      -1.0925484305920792, 0.5462742152960396)
C3 = (-0.5900435899266435, 2.890611442640554, -0.4570457994644658,
      0.3731763325901154, -0.4570457994644658, 1.445305721320277,
      -0.5900435899266435)


def _check_unit(dirs, tol=1e-6):
    norms = np.linalg.norm(dirs, axis=-1)
    if np.any(np.abs(norms - 1.0) > tol):
        raise ValueError("SH evaluation needs unit view directions")


def sh_basis(dirs) -> np.ndarray:
    """Basis values for unit directions ``(..., 3)`` -> ``(..., 16)``.

    No unit check; use :func:`eval_sh_basis` for validated input.
    """
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    out = np.empty(d.shape[:-1] + (16,))
    out[..., 0] = C0
    out[..., 1] = -C1 * y
    out[..., 2] = C1 * z
    out[..., 3] = -C1 * x
    out[..., 4] = C2[0] * x * y
    out[..., 5] = C2[1] * y * z
    out[..., 6] = C2[2] * (2 * zz - xx - yy)
    out[..., 7] = C2[3] * x * z
    out[..., 8] = C2[4] * (xx - yy)
    out[..., 9] = C3[0] * y * (3 * xx - yy)
    out[..., 10] = C3[1] * x * y * z
    out[..., 11] = C3[2] * y * (4 * zz - xx - yy)
    out[..., 12] = C3[3] * z * (2 * zz - 3 * xx - 3 * yy)
    out[..., 13] = C3[4] * x * (4 * zz - xx - yy)
    out[..., 14] = C3[5] * z * (xx - yy)
    out[..., 15] = C3[6] * x * (xx - 3 * yy)
    return out


def sh_basis_jacobian(dirs) -> np.ndarray:
    """Partial derivatives of the basis polynomials w.r.t. (x, y, z): ``(..., 16, 3)``.

    These are derivatives of the polynomial expressions; callers that start
    from an unnormalized vector must project through the normalization.
    """
    d = np.asarray(dirs, dtype=np.float64)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    xx, yy, zz = x * x, y * y, z * z
    J = np.zeros(d.shape[:-1] + (16, 3))
    J[..., 1, 1] = -C1
    J[..., 2, 2] = C1
    J[..., 3, 0] = -C1
    J[..., 4, 0], J[..., 4, 1] = C2[0] * y, C2[0] * x
    J[..., 5, 1], J[..., 5, 2] = C2[1] * z, C2[1] * y
    J[..., 6, 0], J[..., 6, 1], J[..., 6, 2] = -2 * C2[2] * x, -2 * C2[2] * y, 4 * C2[2] * z
    J[..., 7, 0], J[..., 7, 2] = C2[3] * z, C2[3] * x
    J[..., 8, 0], J[..., 8, 1] = 2 * C2[4] * x, -2 * C2[4] * y
    J[..., 9, 0], J[..., 9, 1] = C3[0] * 6 * x * y, C3[0] * (3 * xx - 3 * yy)
    J[..., 10, 0], J[..., 10, 1], J[..., 10, 2] = C3[1] * y * z, C3[1] * x * z, C3[1] * x * y
    J[..., 11, 0] = C3[2] * (-2 * x * y)
    J[..., 11, 1] = C3[2] * (4 * zz - xx - 3 * yy)
    J[..., 11, 2] = C3[2] * 8 * y * z
    J[..., 12, 0] = C3[3] * (-6 * x * z)
    J[..., 12, 1] = C3[3] * (-6 * y * z)
    J[..., 12, 2] = C3[3] * (6 * zz - 3 * xx - 3 * yy)
    J[..., 13, 0] = C3[4] * (4 * zz - 3 * xx - yy)
    J[..., 13, 1] = C3[4] * (-2 * x * y)
    J[..., 13, 2] = C3[4] * 8 * x * z
    J[..., 14, 0], J[..., 14, 1], J[..., 14, 2] = C3[5] * 2 * x * z, -C3[5] * 2 * y * z, C3[5] * (xx - yy)
    J[..., 15, 0] = C3[6] * (3 * xx - 3 * yy)
    J[..., 15, 1] = C3[6] * (-6 * x * y)
    return J


def eval_sh_basis(direction) -> np.ndarray:
    d = np.asarray(direction, dtype=np.float64)
    _check_unit(d)
    return sh_basis(d)


def vertex_color_raw(coeffs, direction) -> np.ndarray:
    """Unclamped color ``0.5 + Y(d) . coeffs`` for coeffs ``(..., 16, 3)``."""
    basis = sh_basis(direction)
    return 0.5 + np.einsum("...b,...bc->...c", basis, np.asarray(coeffs, dtype=np.float64))


def vertex_color(coeffs, direction, clamp: bool = True) -> np.ndarray:
    d = np.asarray(direction, dtype=np.float64)
    _check_unit(d)
    c = vertex_color_raw(coeffs, d)
    return np.clip(c, 0.0, 1.0) if clamp else c


def rgb_to_dc(rgb) -> np.ndarray:
    """DC coefficient that reproduces ``rgb`` for every view direction."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / C0


def dc_to_rgb(dc) -> np.ndarray:
    return 0.5 + C0 * np.asarray(dc, dtype=np.float64)
