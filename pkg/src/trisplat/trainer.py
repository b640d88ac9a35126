"""Training loop: render, loss, backward, Adam step, and the lifecycle events.

Per iteration the current smoothness and opacity floor come from the
schedule; lifecycle events fire at the start of an iteration in the order
hard prune, blend-weight prune, densify, snap. Everything that influences
the trajectory (scene, moments, RNG, epoch order, weight accumulators) is
part of the checkpoint, so a resumed run reproduces an uninterrupted one.
"""

from __future__ import annotations

import csv
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .delaunay import delaunay_init
from .grad import GradientBuffer, backward, backward_normals
from .io.checkpoint import load_checkpoint, save_checkpoint, scene_arrays, scene_from_arrays
from .io.errors import DataError
from .lifecycle import blend_weight_prune, densify, hard_prune
from .losses import normal_loss_and_grad, photometric_loss, psnr, ssim
from .optim import Adam, exp_lr
from .raster import render_aa, render_normals
from .scene import Scene, map_opacity_grad

log = logging.getLogger(__name__)

METRIC_FIELDS = ("iter", "loss", "psnr", "ssim", "n_verts", "n_tris", "sigma", "floor")
EVAL_FIELDS = ("iter", "view", "name", "psnr", "ssim", "n_verts", "n_tris")


class NumericalError(RuntimeError):
    pass


class EmptySceneError(RuntimeError):
    pass


@dataclass
class EvalTable:
    rows: list                      # per view: dict(view, name, psnr, ssim)
    mean_psnr: float
    mean_ssim: float
    n_verts: int
    n_tris: int

    def as_rows(self, it: int = -1) -> list:
        return [dict(iter=it, n_verts=self.n_verts, n_tris=self.n_tris, **r) for r in self.rows]


def evaluate(scene: Scene, dataset, split: str = "test", aa_scale: int = 2, sigma: float = 1e-4,
             views=None) -> EvalTable:
    """Per-view PSNR/SSIM at ``sigma`` with opacities as they are."""
    ids = dataset.split(split) if views is None else list(views)
    if dataset.images is None:
        dataset.load_images()
    rows = []
    for i in ids:
        out = render_aa(scene, dataset.cameras[i], aa_scale, sigma=sigma, background=dataset.background)
        gt = dataset.images[i]
        rows.append({"view": i, "name": dataset.names[i], "psnr": psnr(out.color, gt), "ssim": ssim(out.color, gt)})
    mp = float(np.mean([r["psnr"] for r in rows])) if rows else float("nan")
    ms = float(np.mean([r["ssim"] for r in rows])) if rows else float("nan")
    return EvalTable(rows, mp, ms, scene.n_vertices, scene.n_triangles)


@dataclass
class TrainResult:
    scene: Scene
    metrics: list = field(default_factory=list)
    evals: list = field(default_factory=list)
    hard_prune_fraction: float = float("nan")


class Trainer:
    def __init__(self, dataset, config: TrainConfig, scene: Scene = None, out_dir=None):
        if len(dataset) == 0:
            raise DataError("dataset has no views")
        self.ds = dataset
        self.cfg = config
        self.sched = config.schedule
        self.out_dir = out_dir
        if dataset.images is None:
            dataset.load_images()
        self.train_ids = dataset.split("train") or list(range(len(dataset)))
        self.rng = np.random.default_rng(config.seed)
        if scene is None:
            if len(dataset.points) < 4:
                raise DataError(f"need at least 4 sparse points to initialize, got {len(dataset.points)}")
            scene = delaunay_init(dataset.points, dataset.colors, jitter_seed=config.seed,
                                  opacity=config.init_opacity, voxel=config.init_voxel)
        self.scene = scene
        self.scene.compact()
        self.adam = Adam(config.adam_beta1, config.adam_beta2, config.adam_eps)
        self.adam._ensure(self.scene)
        self.it = 0
        self.epoch = 0
        self.order = np.zeros(0, np.int64)
        self.pos = 0
        self.snapped = False
        self.hard_pruned = False
        m = len(self.scene.triangles)
        self.epoch_max = np.zeros(m)           # running max T*o in the current epoch
        self.full_max = np.full(m, np.inf)     # max over the last completed epoch (inf: not yet known)
        self.born = np.zeros(m, np.int64)      # epoch in which each triangle appeared
        self.metrics = []
        self.evals = []
        self.hard_prune_fraction = float("nan")
        self._csv_ready = False

    # ------------------------------------------------------------------ schedule
    def floor_at(self, it: int) -> float:
        return 1.0 if self.snapped else self.sched.floor_at(it)

    def lrs(self, it: int) -> dict:
        c = self.cfg
        freeze = self.snapped or it >= self.sched.total_iters - self.sched.opacity_freeze_iters
        return {"positions": exp_lr(it, self.sched.total_iters, c.lr_position, c.lr_position_final),
                "sh_dc": c.lr_sh_dc, "sh_rest": c.lr_sh_rest,
                "opacity": 0.0 if freeze else c.lr_opacity}

    # ------------------------------------------------------------------ bookkeeping
    def _next_view(self) -> int:
        if self.pos >= len(self.order):
            if len(self.order):
                self._end_epoch()
            self.order = self.rng.permutation(np.asarray(self.train_ids, dtype=np.int64))
            self.pos = 0
        v = int(self.order[self.pos])
        self.pos += 1
        return v

    def _end_epoch(self):
        full = self.born < self.epoch
        self.full_max = np.where(full, self.epoch_max, np.inf)
        self.epoch_max = np.zeros_like(self.epoch_max)
        self.epoch += 1

    def _compact(self):
        vkeep, tkeep = self.scene.compact()
        self.adam.gather(vkeep)
        self.epoch_max = self.epoch_max[tkeep]
        self.full_max = self.full_max[tkeep]
        self.born = self.born[tkeep]
        if self.scene.n_triangles == 0:
            raise EmptySceneError(f"no triangles left at iteration {self.it}")

    def _lifecycle(self, it: int):
        s = self.sched
        scene = self.scene
        scene.floor = self.floor_at(it)
        changed = False
        if not self.hard_pruned and it >= s.hard_prune_iter and it > 0:
            rep = hard_prune(scene, s.hard_prune_threshold)
            self.hard_prune_fraction = rep.removed_fraction
            log.info("hard prune at iter %d removed %.1f%% of triangles", it, 100 * rep.removed_fraction)
            self.hard_pruned = True
            # occluders went away; weights from before are stale
            self.full_max[:] = np.inf
            self.born[:] = self.epoch
            changed = True
        elif (self.hard_pruned and s.tau_prune > 0 and s.prune_interval > 0 and it % s.prune_interval == 0
              and np.isfinite(self.full_max[scene.triangles.active]).any()):
            blend_weight_prune(scene, self.full_max, s.tau_prune)
            changed = True
        if (s.densify_rate > 0 and s.densify_interval > 0 and s.densify_start <= it <= s.densify_end
                and it % s.densify_interval == 0):
            n_tri0, n_v0 = len(scene.triangles), len(scene.vertices)
            rep = densify(scene, s.densify_rate, self.rng, s.max_triangles)
            if rep.new_triangles:
                self.adam.append(len(scene.vertices) - n_v0)
                k = len(scene.triangles) - n_tri0
                self.epoch_max = np.concatenate([self.epoch_max, np.zeros(k)])
                self.full_max = np.concatenate([self.full_max, np.full(k, np.inf)])
                self.born = np.concatenate([self.born, np.full(k, self.epoch)])
                changed = True
        if (s.final_snap and not self.snapped and s.opacity_freeze_iters > 0
                and it >= s.total_iters - s.opacity_freeze_iters):
            self.snap()
        if changed:
            self._compact()

    def snap(self):
        """Make every opacity exactly one; opacity stays frozen afterwards."""
        self.snapped = True
        self.scene.floor = 1.0
        log.info("opacities snapped to 1 at iter %d", self.it)

    # ------------------------------------------------------------------ one step
    def step(self) -> dict:
        it = self.it
        cfg = self.cfg
        self._lifecycle(it)
        scene = self.scene
        scene.sigma = self.sched.sigma_at(it)
        view = self._next_view()
        cam, gt = self.ds.cameras[view], self.ds.images[view]
        out = render_aa(scene, cam, cfg.aa_scale, background=self.ds.background)
        loss, dimg = photometric_loss(out.color, gt, cfg.weights)
        buf = GradientBuffer.zeros(len(scene.vertices))
        backward(scene, out, dimg, buf)

        act = scene.vertices.active
        if cfg.weights.beta1 > 0 and not self.snapped and act.any():
            o = scene.vertex_opacity()[act]
            loss += cfg.weights.beta1 * float(o.mean())
            g = map_opacity_grad(scene.vertices.opacity_logit, scene.floor)
            buf.d_opacity_logit[act] += cfg.weights.beta1 * g[act] / act.sum()

        prior = self.ds.normals[view] if self.ds.normals is not None else None
        if cfg.weights.beta2 > 0 and prior is not None:
            nout = render_normals(scene, cam, cfg.aa_scale)
            ln, gn = normal_loss_and_grad(nout.color, prior[0], prior[1])
            loss += cfg.weights.beta2 * ln
            backward_normals(scene, nout, cfg.weights.beta2 * gn, buf)

        if not math.isfinite(loss) or not buf.all_finite():
            self._dump("nonfinite")
            raise NumericalError(f"non-finite loss or gradient at iteration {it} (view {view})")
        self.adam.step(scene, buf, self.lrs(it))
        if not np.all(np.isfinite(scene.vertices.positions)):
            self._dump("nonfinite")
            raise NumericalError(f"non-finite parameters after the update at iteration {it}")
        np.maximum(self.epoch_max, out.per_triangle_max_weight, out=self.epoch_max)

        self.it += 1
        row = None
        last = self.it == self.sched.total_iters
        if cfg.log_interval > 0 and (self.it % cfg.log_interval == 0 or last):
            row = dict(iter=self.it, loss=float(loss), psnr=psnr(out.color, gt), ssim=ssim(out.color, gt),
                       n_verts=scene.n_vertices, n_tris=scene.n_triangles, sigma=scene.sigma, floor=scene.floor)
            self.metrics.append(row)
            self._append_csv("metrics.csv", METRIC_FIELDS, [row])
            log.info("iter %d loss %.5f psnr %.2f tris %d verts %d sigma %.2e floor %.3f", self.it, loss,
                     row["psnr"], row["n_tris"], row["n_verts"], row["sigma"], row["floor"])
        if cfg.eval_interval > 0 and self.it % cfg.eval_interval == 0 and self.ds.test_ids:
            self.run_eval()
        if cfg.checkpoint_interval > 0 and self.it % cfg.checkpoint_interval == 0 and self.out_dir:
            self.save(os.path.join(self.out_dir, f"ckpt_{self.it:06d}.tsp"))
        return row or {"iter": self.it, "loss": float(loss)}

    def run_eval(self) -> EvalTable:
        tab = evaluate(self.scene, self.ds, "test", self.cfg.aa_scale, self.cfg.eval_sigma)
        rows = tab.as_rows(self.it)
        self.evals.extend(rows)
        self._append_csv("eval.csv", EVAL_FIELDS, rows)
        log.info("eval iter %d mean psnr %.2f ssim %.4f", self.it, tab.mean_psnr, tab.mean_ssim)
        return tab

    def finish(self):
        """End-of-training state: sigma at its final value, opacities exactly one."""
        self.scene.sigma = self.sched.sigma_at(self.sched.total_iters)
        if self.sched.final_snap and not self.snapped:
            self.snap()
        self.scene.compact()

    def run(self, until: int = None) -> TrainResult:
        stop = self.sched.total_iters if until is None else min(until, self.sched.total_iters)
        while self.it < stop:
            self.step()
        if self.it >= self.sched.total_iters:
            self.finish()
        return TrainResult(self.scene, self.metrics, self.evals, self.hard_prune_fraction)

    # ------------------------------------------------------------------ persistence
    def _append_csv(self, name, fields, rows):
        if not self.out_dir:
            return
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, name)
        new = not os.path.exists(path)
        with open(path, "a", newline="") as f:
            w = csv.DictWriter(f, fieldnames=fields, extrasaction="ignore")
            if new:
                w.writeheader()
            for r in rows:
                w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})

    def _dump(self, tag):
        if self.out_dir:
            path = os.path.join(self.out_dir, f"{tag}_{self.it:06d}.tsp")
            self.save(path)
            log.error("state dumped to %s", path)

    def state(self):
        arrays = scene_arrays(self.scene)
        arrays.update(self.adam.state_arrays())
        arrays.update({"train/order": self.order, "train/epoch_max": self.epoch_max,
                       "train/full_max": self.full_max, "train/born": self.born})
        meta = {"kind": "train", "iter": self.it, "sigma": self.scene.sigma, "floor": self.scene.floor,
                "epoch": self.epoch, "pos": self.pos, "snapped": self.snapped, "hard_pruned": self.hard_pruned,
                "hard_prune_fraction": self.hard_prune_fraction, "adam_t": self.adam.t,
                "rng": self.rng.bit_generator.state, "config": self.cfg.to_dict()}
        return arrays, meta

    def save(self, path):
        arrays, meta = self.state()
        save_checkpoint(path, arrays, meta)

    @classmethod
    def resume(cls, path, dataset, config: TrainConfig = None, out_dir=None) -> "Trainer":
        from .config import make_config

        arrays, meta = load_checkpoint(path)
        if meta.get("kind") != "train":
            raise DataError(f"{path}: not a training checkpoint")
        cfg = config or make_config(meta["config"])
        scene = scene_from_arrays(arrays, meta["sigma"], meta["floor"])
        t = cls(dataset, cfg, scene=scene, out_dir=out_dir)
        t.adam.load_arrays(arrays, meta["adam_t"])
        t.order = arrays["train/order"]
        t.epoch_max = arrays["train/epoch_max"]
        t.full_max = arrays["train/full_max"]
        t.born = arrays["train/born"]
        t.it, t.epoch, t.pos = meta["iter"], meta["epoch"], meta["pos"]
        t.snapped, t.hard_pruned = meta["snapped"], meta["hard_pruned"]
        t.hard_prune_fraction = meta["hard_prune_fraction"]
        t.rng.bit_generator.state = meta["rng"]
        return t


def train(dataset, config: TrainConfig, scene: Scene = None, out_dir=None) -> TrainResult:
    return Trainer(dataset, config, scene, out_dir).run()
