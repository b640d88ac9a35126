"""Acceptance criteria, one test each.

Each test records a PASS/FAIL line in ``conftest.ACCEPTANCE`` (printed in the
terminal summary) before asserting. The two synthetic training runs are
session fixtures shared by the criteria that need a converged scene.
"""

import json
import time

import numpy as np
import pytest

import conftest
from helpers import fd_probe, front_camera, grad_close, random_scene, tiny_dataset
from trisplat.config import make_config
from trisplat.delaunay import delaunay3d, extract_unique_faces
from trisplat.extract import collect_triangles
from trisplat.geom2d import incenter, inradius, triangle_sdf, window
from trisplat.grad import backward
from trisplat.io import (export_ply, import_ply, load_dataset, load_scene, parse_colmap_text, read_mask, save_scene,
                         write_colmap_text, write_image)
from trisplat.lifecycle import densify, hard_prune, prune_orphan_vertices
from trisplat.raster import render, render_opaque, render_reference
from trisplat.scene import Camera
from trisplat.sh import dc_to_rgb
from trisplat.trainer import Trainer, evaluate

FIT = {"iters": 5000, "log_interval": 500, "densify_rate": 0.5, "densify_end": 833, "max_triangles": 20000}
SOFT_FREE = {"sigma_end": 0.1, "floor_max": 0.0, "final_snap": False, "eval_sigma": 0.1}


def record(n, ok, msg):
    conftest.ACCEPTANCE[n] = (bool(ok), msg)
    print(f"{'PASS' if ok else 'FAIL'} criterion {n}: {msg}")
    assert ok, msg


def _fit(root, opts):
    """Train on the two-object fixture, keeping what the criteria inspect along the way."""
    ds = load_dataset(str(root))
    cfg = make_config(opts)
    t = Trainer(ds, cfg)
    t0 = time.time()
    finite, after_prune = True, None
    while t.it < cfg.iters:
        if t.it == cfg.schedule.hard_prune_iter:
            s = t.scene.copy()
            s.floor = t.floor_at(t.it)
            hard_prune(s, cfg.schedule.hard_prune_threshold)
            act = s.triangles.active
            after_prune = float(s.triangle_opacity()[0][act].min()) if act.any() else 1.0
        finite &= bool(np.isfinite(t.step()["loss"]))
    t.finish()
    test = evaluate(t.scene, ds, "test", cfg.aa_scale, cfg.eval_sigma)
    return dict(ds=ds, cfg=cfg, scene=t.scene, test_psnr=test.mean_psnr, seconds=time.time() - t0,
                finite=finite, after_prune=after_prune, hard_prune_fraction=t.hard_prune_fraction)


@pytest.fixture(scope="session")
def opaque_run(two_objects):
    return _fit(two_objects, FIT)


@pytest.fixture(scope="session")
def soft_run(two_objects):
    return _fit(two_objects, {**FIT, **SOFT_FREE})


def test_criterion_1_gradient_fidelity():
    t0 = time.time()
    rng = np.random.default_rng(7)
    cam = front_camera(32)
    checked, skipped, fails = {}, 0, []
    for sc in range(20):
        base = random_scene(rng, int(rng.integers(2, 11)), floor=[0.0, 0.3][sc % 2], size=0.7)
        if sc % 4 == 1:
            # nearly opaque triangles exercise the occlusion terms
            base.vertices.opacity_logit[:] += rng.uniform(4, 7, len(base.vertices))
        for sigma in (1.0, 0.1, 0.01):
            s = base.copy()
            s.sigma = sigma
            W = rng.uniform(-1, 1, (32, 32, 3))
            buf = backward(s, render(s, cam), W)
            nv = len(s.vertices)
            probes = [("position", (int(rng.integers(nv)), int(rng.integers(3))), buf.d_positions)
                      for _ in range(6)]
            probes += [("sh", (int(rng.integers(nv)), 0, int(rng.integers(3))), buf.d_sh),
                       ("sh", (int(rng.integers(nv)), int(rng.integers(9, 16)), int(rng.integers(3))), buf.d_sh),
                       ("opacity", (int(rng.integers(nv)),), buf.d_opacity_logit),
                       ("sigma", None, None)]
            for kind, idx, g in probes:
                a = buf.d_sigma if kind == "sigma" else g[idx]
                fd, ok = fd_probe(s, cam, W, kind, idx)
                if not ok:
                    skipped += 1
                    continue
                checked[kind] = checked.get(kind, 0) + 1
                if not grad_close(a, fd):
                    fails.append((sc, sigma, kind, idx, a, fd))
    dt = time.time() - t0
    ok = not fails and dt < 120 and all(checked.get(k, 0) >= 40 for k in ("position", "sh", "opacity", "sigma"))
    record(1, ok, f"checked {checked}, {skipped} probes near kinks excluded, {len(fails)} mismatches, {dt:.1f}s")


def test_criterion_2_compositing_oracle():
    render(random_scene(np.random.default_rng(0), 3), front_camera(64))  # compile outside the timing
    t0 = time.time()
    rng = np.random.default_rng(2)
    cam = front_camera(64)
    worst = 0.0
    for _ in range(50):
        s = random_scene(rng, int(rng.integers(1, 101)), sigma=float(rng.choice([1.0, 0.1, 0.01, 1e-4])),
                         floor=float(rng.choice([0.0, 0.5])))
        out = render(s, cam, background=(0.1, 0.2, 0.3))
        C, _, _ = render_reference(s, cam, background=(0.1, 0.2, 0.3))
        worst = max(worst, float(np.abs(out.color - C).max()))
    dt = time.time() - t0
    record(2, worst <= 1e-6 and dt < 60, f"max |tile - reference| {worst:.2e} over 50 scenes, {dt:.1f}s")


def test_criterion_3_window_identities():
    rng = np.random.default_rng(3)
    err = {"incenter": 0.0, "boundary": 0.0, "outside": 0.0, "range": 0.0}
    n = 0
    while n < 1000:
        q = rng.uniform(0, 64, (3, 2))
        if inradius(q) < 0.05:
            continue
        n += 1
        sigma = float(10 ** rng.uniform(-4, 0))
        s, _ = incenter(q)
        err["incenter"] = max(err["incenter"], abs(float(window(q, s, sigma)) - 1))
        e = int(rng.integers(3))
        on_edge = q[e] + rng.random((20, 1)) * (q[(e + 1) % 3] - q[e])
        err["boundary"] = max(err["boundary"], float(window(q, on_edge, sigma).max()))
        p = rng.uniform(-20, 84, (200, 2))
        w = window(q, p, sigma)
        out = triangle_sdf(q, p) >= 0
        if out.any():
            err["outside"] = max(err["outside"], float(w[out].max()))
        err["range"] = max(err["range"], float(max(-w.min(), w.max() - 1)))
    ok = all(v <= 1e-9 for v in err.values())
    record(3, ok, "max deviations " + ", ".join(f"{k} {v:.1e}" for k, v in err.items()) + " over 1000 triangles")


@pytest.mark.slow
def test_criterion_4_synthetic_fit(opaque_run):
    r = opaque_run
    s = r["scene"]
    o = s.vertex_opacity()
    ok = r["test_psnr"] >= 30 and s.sigma == pytest.approx(1e-4) and np.all(o == 1.0) and r["finite"]
    record(4, ok, f"held-out PSNR {r['test_psnr']:.2f} dB, sigma {s.sigma:.1e}, min opacity {o.min()}, "
                  f"{s.n_triangles} triangles, {r['seconds']:.0f}s on this machine")


@pytest.mark.slow
def test_criterion_5_opaque_fast_path(opaque_run):
    s, ds = opaque_run["scene"], opaque_run["ds"]
    good = total = 0
    for cam in ds.cameras:
        full = render(s, cam, background=ds.background).color
        fast, _ = render_opaque(s, cam, background=ds.background)
        d = np.abs(full - fast).max(axis=2)
        good += int((d <= 2 / 255).sum())
        total += d.size
    frac = good / total
    record(5, frac >= 0.99, f"{100 * frac:.3f}% of pixels within 2/255 over {len(ds.cameras)} views")


@pytest.mark.slow
def test_criterion_6_lifecycle_invariants(opaque_run):
    r = opaque_run
    rng = np.random.default_rng(6)
    area_err, dedup_ok, degree_ok = 0.0, True, True
    for _ in range(20):
        s = random_scene(rng, 15, floor=0.5)
        s.vertices.opacity_logit[:] = 5.0
        before = s.copy()
        rep = densify(s, 0.7, rng)
        parents = np.unique(rep.parents)
        P0, P1 = before.vertices.positions, s.vertices.positions
        area = lambda P, t: 0.5 * np.linalg.norm(np.cross(P[t[:, 1]] - P[t[:, 0]], P[t[:, 2]] - P[t[:, 0]]), axis=1)
        kids = area(P1, s.triangles.indices[len(before.triangles):]).reshape(-1, 4).sum(axis=1)
        par = area(P0, before.triangles.indices[parents])
        area_err = max(area_err, float(np.max(np.abs(kids - par) / par)) if len(par) else 0.0)
        # each interior edge shared by two selected parents yields one midpoint
        e = np.sort(before.triangles.indices[parents][:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        dedup_ok &= rep.new_vertices == len(np.unique(e, axis=0))
        s.triangles.active[rng.random(len(s.triangles)) < 0.3] = False
        prune_orphan_vertices(s)
        s.compact()
        degree_ok &= s.n_triangles == 0 or s.vertex_degree().min() >= 1
    final = r["scene"]
    degree_ok &= final.vertex_degree().min() >= 1
    ok = r["after_prune"] >= 0.2 and area_err <= 1e-9 and dedup_ok and degree_ok
    record(6, ok, f"min opacity after hard prune {r['after_prune']:.3f}, area rel err {area_err:.1e}, "
                  f"midpoints deduplicated {dedup_ok}, min degree >= 1 {degree_ok}; "
                  f"hard prune removed {100 * r['hard_prune_fraction']:.1f}% of triangles (logged only)")


def test_criterion_7_delaunay():
    ok_sphere = True
    for seed in range(3):
        pts = np.random.default_rng(seed).random((200, 3))
        t = delaunay3d(pts, jitter_seed=seed)
        P = t.points
        diag = np.linalg.norm(P.max(0) - P.min(0))
        for q in t.tets:
            A = 2 * (P[q[1:]] - P[q[0]])
            c = np.linalg.solve(A, np.sum(P[q[1:]] ** 2 - P[q[0]] ** 2, axis=1))
            d = np.linalg.norm(P - c, axis=1)
            d[q] = np.inf
            ok_sphere &= d.min() >= np.linalg.norm(P[q[0]] - c) - 1e-9 * diag
    reg = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], float)
    one = len(delaunay3d(reg, jitter=0.0).tets)
    seven = len(extract_unique_faces([[0, 1, 2, 3], [1, 2, 3, 4]]))
    record(7, ok_sphere and one == 1 and seven == 7,
           f"empty circumspheres {ok_sphere} on 3x200 points, 4 points -> {one} tet, 2 tets -> {seven} faces")


def test_criterion_8_extraction(two_objects):
    labels = json.loads((two_objects / "labels.json").read_text())
    ds = load_dataset(str(two_objects), load_images=False)
    gt = load_scene(two_objects / "gt_scene.tsp")
    views = labels["mask_views"]
    masks = [read_mask(two_objects / "masks" / f"{ds.names[i]}.png") if i in views else None
             for i in range(len(ds))]
    got = set(collect_triangles(gt, ds.cameras, masks).tolist())
    want = set(labels["object_a"])
    prec = len(got & want) / max(len(got), 1)
    rec = len(got & want) / len(want)
    record(8, prec == 1.0 and rec == 1.0 and len(views) == 5,
           f"precision {prec:.3f}, recall {rec:.3f} over {len(views)} masked views")


@pytest.mark.slow
def test_criterion_9_ablation_direction(opaque_run, soft_run):
    a, b = opaque_run["test_psnr"], soft_run["test_psnr"]
    record(9, b >= a, f"soft/free {b:.2f} dB vs opaque/hard {a:.2f} dB held-out PSNR")


def test_criterion_10_format_round_trips(tmp_path):
    rng = np.random.default_rng(10)
    s = random_scene(rng, 30, sh_scale=0.4)
    s.sigma, s.floor = 0.0123, 0.4
    export_ply(s, tmp_path / "s.ply")
    pos, cols, faces, _ = import_ply(tmp_path / "s.ply")
    ply_ok = (np.array_equal(pos, s.vertices.positions.astype(np.float32))
              and np.array_equal(faces, s.triangles.indices)
              and np.abs(cols - np.clip(dc_to_rgb(s.vertices.sh[:, 0]), 0, 1)).max() <= 1 / 255)
    save_scene(s, tmp_path / "s.tsp")
    back = load_scene(tmp_path / "s.tsp")
    ck_ok = all(np.array_equal(x, y) and x.dtype == y.dtype for x, y in [
        (s.vertices.positions, back.vertices.positions), (s.vertices.sh, back.vertices.sh),
        (s.vertices.opacity_logit, back.vertices.opacity_logit), (s.triangles.indices, back.triangles.indices)])
    ck_ok &= (back.sigma, back.floor) == (s.sigma, s.floor)

    cams = [Camera.look_at(rng.normal(size=3) + [0, 0, -6], (0, 0, 0), (0, -1, 0), 30, 30, 40, 30)
            for _ in range(3)]
    names = [f"img_{i}.png" for i in range(3)]
    write_colmap_text(tmp_path / "colmap" / "sparse" / "0", cams, names, rng.normal(size=(10, 3)),
                      rng.random((10, 3)))
    for n in names:
        write_image(np.zeros((30, 40, 3)), tmp_path / "colmap" / "images" / n)
    cm = parse_colmap_text(tmp_path / "colmap")
    colmap_ok = len(cm) == 3 and cm.points.shape == (10, 3)

    ds, _ = tiny_dataset(seed=10)
    opts = {"iters": 30, "init_opacity": 0.5, "log_interval": 5}
    Trainer(ds, make_config(opts), out_dir=str(tmp_path / "a")).run()
    Trainer(ds, make_config(opts), out_dir=str(tmp_path / "b")).run()
    csv_a = (tmp_path / "a" / "metrics.csv").read_bytes()
    det_ok = csv_a == (tmp_path / "b" / "metrics.csv").read_bytes() and len(csv_a) > 0
    record(10, ply_ok and ck_ok and colmap_ok and det_ok,
           f"ply {ply_ok}, checkpoint bit-exact {ck_ok}, colmap counts {colmap_ok}, identical metrics.csv {det_ok}")
