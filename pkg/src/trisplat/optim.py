"""Adam over the per-vertex parameter groups.

Groups: ``positions`` (N, 3), ``sh_dc`` (N, 1, 3), ``sh_rest`` (N, 15, 3) and
``opacity`` (N,). Moments are stored per vertex so they can follow the
vertex store through densification (appended rows start at zero) and
compaction (rows gathered by the keep index).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grad import GradientBuffer
from .scene import Scene

GROUPS = ("positions", "sh_dc", "sh_rest", "opacity")


def exp_lr(step: int, total: int, lr_init: float, lr_final: float) -> float:
    """Log-linear decay from ``lr_init`` at step 0 to ``lr_final`` at ``total``."""
    if total <= 0 or lr_init <= 0:
        return lr_init
    t = min(max(step / total, 0.0), 1.0)
    return math.exp((1 - t) * math.log(lr_init) + t * math.log(lr_final))


def _views(scene: Scene):
    V = scene.vertices
    return {"positions": V.positions, "sh_dc": V.sh[:, :1], "sh_rest": V.sh[:, 1:],
            "opacity": V.opacity_logit}


def _grads(buf: GradientBuffer):
    return {"positions": buf.d_positions, "sh_dc": buf.d_sh[:, :1], "sh_rest": buf.d_sh[:, 1:],
            "opacity": buf.d_opacity_logit}


@dataclass
class Adam:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-15

    def __post_init__(self):
        self.m = {}
        self.v = {}
        self.t = 0

    def _ensure(self, scene: Scene):
        for name, p in _views(scene).items():
            if name not in self.m or self.m[name].shape != p.shape:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)

    def step(self, scene: Scene, buf: GradientBuffer, lrs: dict) -> None:
        """In-place update; groups with lr 0 (or missing) are left untouched."""
        self._ensure(scene)
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        params, grads = _views(scene), _grads(buf)
        for name in GROUPS:
            lr = lrs.get(name, 0.0)
            if lr <= 0:
                continue
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            params[name] -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def append(self, n_new: int) -> None:
        """Zero moments for ``n_new`` vertices appended to the store."""
        for name in list(self.m):
            pad = np.zeros((n_new,) + self.m[name].shape[1:])
            self.m[name] = np.concatenate([self.m[name], pad])
            self.v[name] = np.concatenate([self.v[name], pad])

    def gather(self, keep) -> None:
        for name in list(self.m):
            self.m[name] = self.m[name][keep]
            self.v[name] = self.v[name][keep]

    def state_arrays(self, prefix: str = "adam/") -> dict:
        out = {}
        for name in self.m:
            out[f"{prefix}m/{name}"] = self.m[name]
            out[f"{prefix}v/{name}"] = self.v[name]
        return out

    def load_arrays(self, arrays: dict, t: int, prefix: str = "adam/") -> None:
        self.m, self.v = {}, {}
        for name in GROUPS:
            if f"{prefix}m/{name}" in arrays:
                self.m[name] = arrays[f"{prefix}m/{name}"].copy()
                self.v[name] = arrays[f"{prefix}v/{name}"].copy()
        self.t = int(t)
