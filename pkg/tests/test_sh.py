import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from trisplat.sh import (C0, dc_to_rgb, eval_sh_basis, rgb_to_dc, sh_basis, sh_basis_jacobian, vertex_color,
                         vertex_color_raw)

vec = st.tuples(*[st.floats(-1, 1, allow_nan=False)] * 3).filter(lambda v: np.linalg.norm(v) > 0.1)


def unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


def test_constant_band():
    b = eval_sh_basis((0.0, 0.0, 1.0))
    assert b[0] == pytest.approx(0.2820947918)
    assert C0 == pytest.approx(0.2820947918)


def test_band1_z_flips():
    up, down = eval_sh_basis((0, 0, 1)), eval_sh_basis((0, 0, -1))
    assert up[2] == pytest.approx(-down[2]) and up[2] != 0


def test_non_unit_rejected():
    with pytest.raises(ValueError):
        eval_sh_basis((0, 0, 2))


def test_orthonormal_monte_carlo():
    # E[Y Y^T] over the sphere is I / (4 pi)
    rng = np.random.default_rng(0)
    d = rng.normal(size=(1_000_000, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    B = sh_basis(d)
    G = 4 * np.pi * (B.T @ B) / len(d)
    np.testing.assert_allclose(G, np.eye(16), atol=1e-2)
    assert np.abs(G - np.eye(16)).mean() < 1e-3


def test_vertex_color_examples():
    d = unit((0.3, -0.2, 0.9))
    np.testing.assert_allclose(vertex_color(np.zeros((16, 3)), d), [0.5] * 3)
    c = np.zeros((16, 3))
    c[0] = (0.5 / 0.2820947918, 0, 0)
    np.testing.assert_allclose(vertex_color(c, d), [1.0, 0.5, 0.5], atol=1e-9)


def test_view_independent_without_higher_bands():
    rng = np.random.default_rng(1)
    c = np.zeros((16, 3))
    c[0] = rng.normal(size=3)
    dirs = rng.normal(size=(100, 3))
    cols = np.array([vertex_color(c, unit(x)) for x in dirs])
    assert np.ptp(cols, axis=0).max() == 0


@given(vec, st.floats(-2, 2), st.floats(-2, 2))
def test_linearity(d, a, b):
    rng = np.random.default_rng(3)
    d = unit(d)
    C1, C2 = rng.normal(size=(16, 3)), rng.normal(size=(16, 3))
    lhs = vertex_color_raw(a * C1 + b * C2, d) - 0.5
    rhs = a * (vertex_color_raw(C1, d) - 0.5) + b * (vertex_color_raw(C2, d) - 0.5)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


@given(vec)
def test_jacobian_matches_fd(d):
    d = unit(d)
    J = sh_basis_jacobian(d)
    for k in range(3):
        e = np.zeros(3)
        e[k] = 1e-6
        fd = (sh_basis(d + e) - sh_basis(d - e)) / 2e-6
        np.testing.assert_allclose(J[:, k], fd, atol=1e-6)


@given(vec)
def test_rotation_invariance_of_band0(d):
    c = np.zeros((16, 3))
    c[0] = (0.2, -0.1, 0.4)
    np.testing.assert_allclose(vertex_color(c, unit(d)), vertex_color(c, unit(d[::-1])))


def test_dc_round_trip():
    rgb = np.array([[1.0, 0.0, 0.25], [0.5, 0.5, 0.5]])
    np.testing.assert_allclose(dc_to_rgb(rgb_to_dc(rgb)), rgb, atol=1e-12)
    c = np.zeros((16, 3))
    c[0] = rgb_to_dc([1.0, 0.0, 0.0])
    np.testing.assert_allclose(vertex_color(c, (0, 0, 1.0)), [1, 0, 0], atol=1e-12)
