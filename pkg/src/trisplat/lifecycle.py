"""Training-time schedules and structural edits of the triangle set.

Smoothness is annealed log-linearly from 1 to 1e-4. The opacity floor stays
at zero until ``floor_start_iter``, where a one-off hard prune removes
every triangle below ``hard_prune_threshold``; afterwards the floor rises
linearly and pruning switches to the maximum blend weight ``T * o`` seen
over a full pass of the training views. Densification splits triangles
into four via their edge midpoints.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .scene import Scene, TriangleSet, VertexSet

log = logging.getLogger(__name__)

REFERENCE_ITERS = 30000


@dataclass
class TrainSchedule:
    total_iters: int = REFERENCE_ITERS
    sigma_start: float = 1.0
    sigma_end: float = 1e-4
    floor_start_iter: int = 5000
    floor_end_iter: int = 27000
    floor_max: float = 0.995
    hard_prune_iter: int = 5000
    hard_prune_threshold: float = 0.2
    tau_prune: float = 0.01
    prune_interval: int = 500
    densify_interval: int = 500
    densify_start: int = 500
    densify_end: int = 18000
    densify_rate: float = 0.05
    max_triangles: int = 4_000_000
    opacity_freeze_iters: int = 500
    final_snap: bool = True           # False keeps opacity free to the end (ablation)

    def __post_init__(self):
        if not 0 <= self.floor_start_iter <= self.floor_end_iter <= self.total_iters:
            raise ValueError("need floor_start_iter <= floor_end_iter <= total_iters")
        if not 0.0 < self.hard_prune_threshold < 1.0 or not 0.0 <= self.tau_prune < 1.0:
            raise ValueError("prune thresholds must lie in (0, 1)")
        if not 0.0 <= self.floor_max < 1.0:
            raise ValueError("floor_max must lie in [0, 1)")

    @classmethod
    def for_iters(cls, total_iters: int, **overrides) -> "TrainSchedule":
        """Defaults with every iteration count scaled from the 30k reference run."""
        f = total_iters / REFERENCE_ITERS
        base = cls()
        kw = {}
        for name in ("floor_start_iter", "floor_end_iter", "hard_prune_iter", "prune_interval",
                     "densify_interval", "densify_start", "densify_end", "opacity_freeze_iters"):
            kw[name] = max(1, int(round(getattr(base, name) * f))) if total_iters else 0
        kw["total_iters"] = total_iters
        kw.update(overrides)
        return cls(**kw)

    def sigma_at(self, it: int) -> float:
        return sigma_at(it, self.total_iters, self.sigma_start, self.sigma_end)

    def floor_at(self, it: int) -> float:
        return floor_at(it, self.floor_start_iter, self.floor_end_iter, self.floor_max)


def sigma_at(it: int, total: int, start: float = 1.0, end: float = 1e-4) -> float:
    if total <= 0:
        return end
    t = min(max(it / total, 0.0), 1.0)
    return float(math.exp((1 - t) * math.log(start) + t * math.log(end)))


def floor_at(it: int, start_iter: int, end_iter: int, floor_max: float = 0.995) -> float:
    if it < start_iter:
        return 0.0
    if it >= end_iter:
        return floor_max
    return floor_max * (it - start_iter) / (end_iter - start_iter)


@dataclass
class PruneReport:
    kind: str
    removed_triangles: int
    removed_vertices: int
    remaining_triangles: int
    remaining_vertices: int

    @property
    def removed_fraction(self) -> float:
        total = self.removed_triangles + self.remaining_triangles
        return self.removed_triangles / total if total else 0.0


@dataclass
class DensifyReport:
    selected: int
    new_triangles: int
    new_vertices: int
    parents: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


def prune_orphan_vertices(scene: Scene) -> int:
    """Deactivate active vertices that no active triangle references."""
    deg = scene.vertex_degree()
    orphan = scene.vertices.active & (deg == 0)
    scene.vertices.active &= ~orphan
    return int(orphan.sum())


def _finish_prune(scene: Scene, kind: str, mask) -> PruneReport:
    n = int(mask.sum())
    scene.triangles.active &= ~mask
    nv = prune_orphan_vertices(scene)
    rep = PruneReport(kind, n, nv, scene.n_triangles, scene.n_vertices)
    log.info("prune kind=%s removed_tris=%d removed_verts=%d tris=%d verts=%d",
             kind, n, nv, rep.remaining_triangles, rep.remaining_vertices)
    return rep


def hard_prune(scene: Scene, threshold: float = 0.2) -> PruneReport:
    """Remove every active triangle whose mapped opacity is strictly below ``threshold``."""
    o, _ = scene.triangle_opacity()
    return _finish_prune(scene, "hard", scene.triangles.active & (o < threshold))


def blend_weight_prune(scene: Scene, max_weights, tau_prune: float = 0.01) -> PruneReport:
    """Remove triangles whose max blend weight over all training views is below ``tau_prune``."""
    w = np.asarray(max_weights, dtype=np.float64)
    if w.shape != (len(scene.triangles),):
        raise ValueError(f"weight vector has {w.shape[0]} entries for {len(scene.triangles)} triangles")
    return _finish_prune(scene, "blend", scene.triangles.active & (w < tau_prune))


def densify(scene: Scene, rate: float, rng: np.random.Generator, max_triangles: int = 4_000_000,
            force=None) -> DensifyReport:
    """Midpoint-subdivide triangles picked by Bernoulli(rate * opacity).

    ``force`` (boolean mask over triangle slots) bypasses sampling. Selected
    parents are tombstoned; children and midpoint vertices are appended.
    Midpoints are shared between selected triangles with a common edge.
    """
    T = scene.triangles
    active = np.flatnonzero(T.active)
    o, _ = scene.triangle_opacity()
    if force is not None:
        sel = active[np.asarray(force, dtype=bool)[active]]
    else:
        u = rng.random(len(active))
        sel = active[u < rate * o[active]]
    budget = max(0, (max_triangles - len(active)) // 3)
    if len(sel) > budget:
        order = np.lexsort((sel, -o[sel]))
        sel = np.sort(sel[order[:budget]])
    if len(sel) == 0:
        return DensifyReport(0, 0, 0)

    V = scene.vertices
    mid_of = {}
    new_a, new_b = [], []
    children = []
    n0 = len(V)

    def midpoint(a, b):
        key = (a, b) if a < b else (b, a)
        m = mid_of.get(key)
        if m is None:
            m = n0 + len(new_a)
            mid_of[key] = m
            new_a.append(key[0])
            new_b.append(key[1])
        return m

    for t in sel:
        a, b, c = (int(x) for x in T.indices[t])
        ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
        children += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]

    ia, ib = np.array(new_a), np.array(new_b)
    scene.vertices = VertexSet(
        np.concatenate([V.positions, 0.5 * (V.positions[ia] + V.positions[ib])]),
        np.concatenate([V.sh, 0.5 * (V.sh[ia] + V.sh[ib])]),
        np.concatenate([V.opacity_logit, 0.5 * (V.opacity_logit[ia] + V.opacity_logit[ib])]),
        np.concatenate([V.active, np.ones(len(ia), dtype=bool)]))
    active_mask = T.active.copy()
    active_mask[sel] = False
    scene.triangles = TriangleSet(np.concatenate([T.indices, np.array(children, dtype=np.int64)]),
                                  np.concatenate([active_mask, np.ones(len(children), dtype=bool)]))
    rep = DensifyReport(len(sel), len(children), len(ia), np.repeat(sel, 4))
    log.info("densify selected=%d new_tris=%d new_verts=%d tris=%d verts=%d",
             rep.selected, rep.new_triangles, rep.new_vertices, scene.n_triangles, scene.n_vertices)
    return rep
