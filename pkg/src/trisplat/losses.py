"""Photometric losses, regularizers and evaluation metrics (with gradients).

Images are ``(H, W, 3)`` float arrays in [0, 1]. SSIM uses an 11x11
Gaussian window (sigma 1.5) evaluated only where the window fits inside
the image ("valid" positions) and averaged over positions and channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

WINDOW = 11
WINDOW_SIGMA = 1.5
C1 = 0.01 ** 2
C2 = 0.03 ** 2
PSNR_CAP = 100.0


@dataclass
class LossWeights:
    lam: float = 0.2     # D-SSIM share of the photometric term
    beta1: float = 0.01  # opacity regularizer
    beta2: float = 0.05  # normal prior

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.beta1 < 0 or self.beta2 < 0:
            raise ValueError("regularizer weights must be non-negative")


def _check_pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")
    return pred, target


def gaussian_window(size: int = WINDOW, sigma: float = WINDOW_SIGMA) -> np.ndarray:
    x = np.arange(size) - size // 2
    g = np.exp(-x ** 2 / (2 * sigma ** 2))
    return g / g.sum()


def _blur_valid(img, g):
    """Separable 'valid' correlation over the two spatial axes."""
    h = len(g) // 2
    out = correlate1d(img, g, axis=0, mode="constant")
    out = correlate1d(out, g, axis=1, mode="constant")
    return out[h:img.shape[0] - h, h:img.shape[1] - h]


def _blur_valid_adjoint(grad, g, shape):
    h = len(g) // 2
    full = np.zeros(shape)
    full[h:shape[0] - h, h:shape[1] - h] = grad
    out = correlate1d(full, g[::-1], axis=0, mode="constant")
    return correlate1d(out, g[::-1], axis=1, mode="constant")


def l1(pred, target) -> float:
    pred, target = _check_pair(pred, target)
    return float(np.mean(np.abs(pred - target)))


def l1_grad(pred, target) -> np.ndarray:
    pred, target = _check_pair(pred, target)
    return np.sign(pred - target) / pred.size


def _ssim_terms(x, y):
    if x.shape[0] < WINDOW or x.shape[1] < WINDOW:
        raise ValueError(f"image {x.shape[:2]} smaller than the {WINDOW}x{WINDOW} SSIM window")
    g = gaussian_window()
    mx, my = _blur_valid(x, g), _blur_valid(y, g)
    exx, eyy, exy = _blur_valid(x * x, g), _blur_valid(y * y, g), _blur_valid(x * y, g)
    vx, vy, cxy = exx - mx * mx, eyy - my * my, exy - mx * my
    A1, A2 = 2 * mx * my + C1, 2 * cxy + C2
    B1, B2 = mx * mx + my * my + C1, vx + vy + C2
    return g, mx, my, A1, A2, B1, B2


def ssim(pred, target) -> float:
    pred, target = _check_pair(pred, target)
    _, _, _, A1, A2, B1, B2 = _ssim_terms(pred, target)
    return float(np.mean(A1 * A2 / (B1 * B2)))


def ssim_grad(pred, target) -> np.ndarray:
    """d mean-SSIM / d pred."""
    pred, target = _check_pair(pred, target)
    g, mx, my, A1, A2, B1, B2 = _ssim_terms(pred, target)
    S = A1 * A2 / (B1 * B2)
    n = S.size
    d_mx = (2 * my * A2 / (B1 * B2) - 2 * mx * S / B1
            - 2 * my * A1 / (B1 * B2) + 2 * mx * S / B2) / n
    d_exx = -S / B2 / n
    d_exy = 2 * A1 / (B1 * B2) / n
    shape = pred.shape
    return (_blur_valid_adjoint(d_mx, g, shape)
            + 2 * pred * _blur_valid_adjoint(d_exx, g, shape)
            + target * _blur_valid_adjoint(d_exy, g, shape))


def dssim(pred, target) -> float:
    return (1.0 - ssim(pred, target)) / 2.0


def dssim_grad(pred, target) -> np.ndarray:
    return -0.5 * ssim_grad(pred, target)


def opacity_loss(opacities) -> float:
    o = np.asarray(opacities, dtype=np.float64)
    return float(o.mean()) if o.size else 0.0


def normal_loss(rendered, prior, valid_mask=None) -> float:
    """Mean ``1 - cos`` between rendered and prior normals over valid pixels."""
    if prior is None:
        return 0.0
    value, _ = normal_loss_and_grad(rendered, prior, valid_mask)
    return value


def normal_loss_and_grad(rendered, prior, valid_mask=None):
    rendered = np.asarray(rendered, dtype=np.float64)
    grad = np.zeros_like(rendered)
    if prior is None:
        return 0.0, grad
    prior = np.asarray(prior, dtype=np.float64)
    norm = np.linalg.norm(rendered, axis=-1)
    valid = norm > 1e-6
    if valid_mask is not None:
        valid &= np.asarray(valid_mask, dtype=bool)
    count = int(valid.sum())
    if count == 0:
        return 0.0, grad
    nhat = rendered[valid] / norm[valid, None]
    value = float(np.mean(1.0 - np.sum(nhat * prior[valid], axis=-1)))
    # gradient w.r.t. the (already unit) rendered normal
    grad[valid] = -prior[valid] / count
    return value, grad


def psnr(pred, target) -> float:
    pred, target = _check_pair(pred, target)
    mse = float(np.mean((pred - target) ** 2))
    if mse <= 10 ** (-PSNR_CAP / 10):
        return PSNR_CAP
    return -10.0 * np.log10(mse)


def photometric_loss(pred, target, weights: LossWeights):
    """``(1 - lam) L1 + lam D-SSIM`` and its image gradient."""
    l = (1 - weights.lam) * l1(pred, target)
    g = (1 - weights.lam) * l1_grad(pred, target)
    if weights.lam > 0:
        l += weights.lam * dssim(pred, target)
        g = g + weights.lam * dssim_grad(pred, target)
    return l, g


def loss_backward(pred, target, weights: LossWeights) -> np.ndarray:
    return photometric_loss(pred, target, weights)[1]
