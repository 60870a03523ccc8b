import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oohomog.fem import LagrangeSpace, shape_functions, triangle_rule
from oohomog.mesh import build_online_mesh


def _monomial_integral(a, b):
    # int_T x^a y^b over the reference triangle = a! b! / (a + b + 2)!
    return math.factorial(a) * math.factorial(b) / math.factorial(a + b + 2)


@pytest.mark.parametrize("deg", range(0, 11))
def test_rule_exactness(deg):
    pts, w = triangle_rule(deg)
    assert w.sum() == pytest.approx(0.5, abs=1e-15)
    for a in range(deg + 1):
        b = deg - a
        assert np.dot(w, pts[:, 0] ** a * pts[:, 1] ** b) == pytest.approx(_monomial_integral(a, b), rel=1e-12)


@pytest.mark.parametrize("degree", [1, 2])
def test_shape_partition_of_unity_and_nodality(degree):
    nodes = np.array([[0, 0], [1, 0], [0, 1], [0.5, 0.5], [0, 0.5], [0.5, 0]])[: 3 * degree]
    vals, grads = shape_functions(degree, nodes)
    assert np.allclose(vals, np.eye(len(nodes)))
    x = np.random.default_rng(0).uniform(0, 0.5, (20, 2))
    vals, grads = shape_functions(degree, x)
    assert np.allclose(vals.sum(-1), 1) and np.allclose(grads.sum(-2), 0)


@pytest.mark.parametrize("degree,periodic,count", [(1, False, 36), (2, False, 121), (1, True, 25), (2, True, 100)])
def test_dof_counts(degree, periodic, count):
    sp = LagrangeSpace(build_online_mesh((0, 0, 1, 1), 5), degree, periodic)
    assert sp.n_dofs == count
    assert len(sp.boundary_dofs) == (0 if periodic else 4 * 5 * degree)


@settings(max_examples=25, deadline=None)
@given(c=st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_p2_interpolates_quadratics_exactly(c):
    def u(x):
        x1, x2 = x[..., 0], x[..., 1]
        return c[0] + c[1] * x1 + c[2] * x2 + c[3] * x1 * x1 + c[4] * x1 * x2 + c[5] * x2 * x2

    sp = LagrangeSpace(build_online_mesh((0, 0, 1, 1), 3), 2)
    coef = sp.interpolate(u)
    x = np.random.default_rng(1).uniform(0, 1, (50, 2))
    val, grad = sp.evaluate(coef, x, gradient=True)
    assert np.allclose(val, u(x), atol=1e-12)
    g = np.stack([c[1] + 2 * c[3] * x[:, 0] + c[4] * x[:, 1], c[2] + c[4] * x[:, 0] + 2 * c[5] * x[:, 1]], -1)
    assert np.allclose(grad, g, atol=1e-11)


def test_stiffness_symmetric_and_kernel():
    sp = LagrangeSpace(build_online_mesh((0, 0, 1, 1), 4), 2)
    pts, _ = sp.quadrature(6)
    A = np.zeros(pts.shape[:-1] + (2, 2))
    A[..., 0, 0] = 1 + pts[..., 0]
    A[..., 1, 1] = 2 + pts[..., 1] ** 2
    K = sp.stiffness(A, 6)
    assert abs(K - K.T).max() < 1e-14 * abs(K).max()
    assert np.allclose(K @ np.ones(sp.n_dofs), 0, atol=1e-12)


def test_stiffness_energy_of_linear():
    # u = x + 2y, A = I: energy = |grad u|^2 * area = 5
    sp = LagrangeSpace(build_online_mesh((0, 0, 1, 1), 3), 1)
    u = sp.interpolate(lambda x: x[..., 0] + 2 * x[..., 1])
    pts, _ = sp.quadrature(2)
    K = sp.stiffness(np.broadcast_to(np.eye(2), pts.shape[:-1] + (2, 2)), 2)
    assert u @ K @ u == pytest.approx(5.0, rel=1e-13)


def test_load_integrates_constant():
    sp = LagrangeSpace(build_online_mesh((0, 0, 2, 1), 4), 2)
    pts, _ = sp.quadrature(4)
    b = sp.load(np.full(pts.shape[:-1], 3.0), 4)
    assert b.sum() == pytest.approx(6.0, rel=1e-13)


def test_periodic_wraps():
    sp = LagrangeSpace(build_online_mesh((0, 0, 1, 1), 4), 2, periodic=True)
    # a periodic function interpolated on the wrapped lattice is continuous across the seam
    coef = sp.interpolate(lambda x: np.sin(2 * np.pi * x[..., 0]) * np.cos(2 * np.pi * x[..., 1]))
    left = sp.evaluate(coef, np.array([[1e-13, 0.3]]))
    right = sp.evaluate(coef, np.array([[1 - 1e-13, 0.3]]))
    assert left == pytest.approx(right, abs=1e-9)
