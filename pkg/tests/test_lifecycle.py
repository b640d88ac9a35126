import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from helpers import front_camera, random_scene
from trisplat.lifecycle import (TrainSchedule, blend_weight_prune, densify, floor_at, hard_prune,
                                prune_orphan_vertices, sigma_at)
from trisplat.raster import render
from trisplat.scene import Scene, inverse_opacity


def area3(P):
    return 0.5 * np.linalg.norm(np.cross(P[1] - P[0], P[2] - P[0]))


def tri_areas(scene, ids):
    P = scene.vertices.positions
    return np.array([area3(P[scene.triangles.indices[t]]) for t in ids])


def test_sigma_schedule_examples():
    assert sigma_at(0, 1000) == pytest.approx(1.0)
    assert sigma_at(1000, 1000) == pytest.approx(1e-4)
    assert sigma_at(500, 1000) == pytest.approx(1e-2)
    s = [sigma_at(i, 1000) for i in range(1001)]
    assert np.all(np.diff(s) <= 0)


def test_floor_schedule_examples():
    sched = TrainSchedule()
    assert sched.floor_at(4999) == 0
    assert sched.floor_at(sched.floor_end_iter) == pytest.approx(0.995)
    assert sched.floor_at(sched.total_iters) == pytest.approx(0.995)
    f = [sched.floor_at(i) for i in range(0, sched.total_iters + 1, 7)]
    assert np.all(np.diff(f) >= 0)
    assert floor_at(5000, 5000, 6000) == 0.0
    assert floor_at(5500, 5000, 6000) == pytest.approx(0.4975)


def test_schedule_validation_and_scaling():
    with pytest.raises(ValueError):
        TrainSchedule(total_iters=1000, floor_start_iter=900, floor_end_iter=800)
    with pytest.raises(ValueError):
        TrainSchedule(hard_prune_threshold=1.0)
    s = TrainSchedule.for_iters(3000)
    assert (s.floor_start_iter, s.floor_end_iter, s.hard_prune_iter) == (500, 2700, 500)
    assert s.densify_end == 1800 and s.prune_interval == 50


def _strip(opacities):
    # disjoint triangles with vertex opacities set directly (floor 0)
    n = len(opacities)
    P = np.concatenate([[[3 * i, 0, 0], [3 * i + 1, 0, 0], [3 * i, 1, 0]] for i in range(n)]).astype(float)
    logit = np.repeat(inverse_opacity(np.asarray(opacities, float), 0.0), 3)
    return Scene.from_arrays(P, np.arange(3 * n).reshape(n, 3), opacity_logit=logit)


def test_hard_prune_example():
    s = _strip([0.1, 0.19, 0.21, 0.9])
    rep = hard_prune(s, 0.2)
    assert rep.removed_triangles == 2 and rep.removed_vertices == 6
    assert list(np.flatnonzero(s.triangles.active)) == [2, 3]
    o, _ = s.triangle_opacity()
    assert np.all(o[s.triangles.active] >= 0.2)
    s.validate()
    assert rep.removed_fraction == 0.5


@given(st.lists(st.floats(0.01, 0.99), min_size=1, max_size=20), st.floats(0.05, 0.95))
def test_hard_prune_postcondition(ops, thr):
    s = _strip(ops)
    hard_prune(s, thr)
    o, _ = s.triangle_opacity()
    assert np.all(o[s.triangles.active] >= thr)
    assert np.all(s.vertex_degree()[s.vertices.active] >= 1)
    s.validate()


def test_blend_prune_removes_occluded_triangle():
    front = [[-3, -3, -1], [3, -3, -1], [0, 3, -1]]
    back = [[-1, -1, 1], [1, -1, 1], [0, 1, 1]]
    s = Scene.from_arrays(np.array(front + back, float), [[0, 1, 2], [3, 4, 5]], sigma=1e-4, floor=1.0)
    w = render(s, front_camera(32)).per_triangle_max_weight
    assert w[0] == pytest.approx(1.0) and w[1] < 0.01
    keep = s.copy()
    rep = blend_weight_prune(s, w, 0.01)
    assert rep.removed_triangles == 1 and list(np.flatnonzero(s.triangles.active)) == [0]
    assert blend_weight_prune(keep, w, 0.0).removed_triangles == 0
    with pytest.raises(ValueError):
        blend_weight_prune(keep, w[:1], 0.01)


def test_orphan_prune_examples():
    P = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [9, 9, 9]], float)
    s = Scene.from_arrays(P, [[0, 1, 2], [1, 3, 2]])
    assert prune_orphan_vertices(s) == 1 and not s.vertices.active[4]
    s.triangles.active[1] = False
    # vertices 1 and 2 are still used by triangle 0; only 3 loses its last triangle
    assert prune_orphan_vertices(s) == 1
    assert list(np.flatnonzero(s.vertices.active)) == [0, 1, 2]
    s.compact()
    assert s.vertex_degree().min() >= 1


def test_densify_single_forced_triangle():
    P = np.array([[0, 0, 0], [2, 0.3, 0.1], [0.4, 1.7, -0.5]])
    s = Scene.from_arrays(P, [[0, 1, 2]])
    s.vertices.sh[:, 0, 0] = [0.0, 1.0, 2.0]
    s.vertices.opacity_logit[:] = [-1.0, 0.0, 1.0]
    rep = densify(s, 0.0, np.random.default_rng(0), force=[True])
    assert (rep.selected, rep.new_triangles, rep.new_vertices) == (1, 4, 3)
    assert s.n_triangles == 4 and s.n_vertices == 6
    kids = np.flatnonzero(s.triangles.active)
    assert tri_areas(s, kids).sum() == pytest.approx(area3(P), rel=1e-9)
    Q = s.vertices.positions
    np.testing.assert_allclose(Q.min(axis=0), P.min(axis=0))
    np.testing.assert_allclose(Q.max(axis=0), P.max(axis=0))
    # midpoints carry the mean of their endpoints
    np.testing.assert_allclose(Q[3], 0.5 * (P[0] + P[1]))
    np.testing.assert_allclose(s.vertices.sh[3:, 0, 0], [0.5, 1.5, 1.0])
    np.testing.assert_allclose(s.vertices.opacity_logit[3:], [-0.5, 0.5, 0.0])
    s.validate()


def test_densify_shared_edge_dedup():
    P = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0]], float)
    s = Scene.from_arrays(P, [[0, 1, 2], [1, 3, 2]])
    densify(s, 0.0, np.random.default_rng(0), force=[True, True])
    assert s.n_vertices == 9 and s.n_triangles == 8


def test_densify_rate_zero_is_identity():
    rng = np.random.default_rng(0)
    s = random_scene(rng, 10)
    before = s.copy()
    rep = densify(s, 0.0, np.random.default_rng(1))
    assert rep.selected == 0
    np.testing.assert_array_equal(s.vertices.positions, before.vertices.positions)
    np.testing.assert_array_equal(s.triangles.indices, before.triangles.indices)


def test_densify_budget_truncates_by_opacity():
    s = _strip([0.3, 0.9, 0.6])
    rep = densify(s, 0.0, np.random.default_rng(0), max_triangles=6, force=[True, True, True])
    assert rep.selected == 1
    assert not s.triangles.active[1] and s.triangles.active[0] and s.triangles.active[2]


@given(st.integers(0, 2**31), st.floats(0.1, 1.0))
def test_densify_invariants(seed, rate):
    rng = np.random.default_rng(seed)
    s = random_scene(rng, 12, floor=0.5)
    s.vertices.opacity_logit[:] = 5.0
    before = s.copy()
    deg0 = before.vertex_degree()
    rep = densify(s, rate, np.random.default_rng(seed))
    s.validate()
    parents = np.unique(rep.parents)
    assert np.all(~s.triangles.active[parents])
    kids = np.arange(len(before.triangles), len(s.triangles))
    ka = tri_areas(s, kids).reshape(-1, 4).sum(axis=1)
    np.testing.assert_allclose(ka, tri_areas(before, parents), rtol=1e-9)
    # vertices untouched by any selected parent keep their degree
    touched = np.zeros(len(before.vertices), bool)
    touched[before.triangles.indices[parents].ravel()] = True
    deg1 = s.vertex_degree()[:len(before.vertices)]
    np.testing.assert_array_equal(deg1[~touched], deg0[~touched])


def test_densify_is_seeded():
    rng = np.random.default_rng(4)
    s = random_scene(rng, 30, floor=0.5)
    a, b = s.copy(), s.copy()
    densify(a, 0.5, np.random.default_rng(7))
    densify(b, 0.5, np.random.default_rng(7))
    np.testing.assert_array_equal(a.triangles.indices, b.triangles.indices)
    np.testing.assert_array_equal(a.triangles.active, b.triangles.active)

