import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oohomog.mesh import (
    MeshError,
    build_all_patches,
    build_offline_mesh,
    build_online_mesh,
    build_patch,
    locate,
    mesh_summary_json,
    moore_layers,
    sampling_threshold,
)


def test_offline_counts_and_geometry():
    m = build_offline_mesh((0, 0, 1, 1), 2)
    assert m.n_elements == 4
    assert np.allclose(m.diameters, math.sqrt(2) / 2)
    assert build_offline_mesh((0, 0, 1, 1), 25).n_elements == 625
    one = build_offline_mesh((0, 0, 1, 1), 1)
    assert np.allclose(one.barycenters, [[0.5, 0.5]])


@pytest.mark.parametrize("q", [0, -3])
def test_offline_rejects_bad_q(q):
    with pytest.raises(MeshError):
        build_offline_mesh((0, 0, 1, 1), q)


def test_offline_rejects_degenerate_domain():
    with pytest.raises(MeshError):
        build_offline_mesh((0, 0, 0, 1), 4)


def test_offline_invariants():
    m = build_offline_mesh((0, 0, 2, 1), 7)
    lo, hi = m.corners[:, 0], m.corners[:, 1]
    assert np.all((m.barycenters > lo) & (m.barycenters < hi))
    assert np.ptp(m.diameters) == 0
    for k, nb in enumerate(m.neighbors):
        assert k not in nb
        for j in nb:
            assert k in m.neighbors[j]


def test_online_counts():
    m = build_online_mesh((0, 0, 1, 1), 1)
    assert m.triangles.shape == (2, 3) and len(m.vertices) == 4 and m.boundary.all()
    m = build_online_mesh((0, 0, 1, 1), 2)
    assert len(m.triangles) == 8 and len(m.vertices) == 9 and m.boundary.sum() == 8
    assert len(build_online_mesh((0, 0, 1, 1), 100).triangles) == 20000
    with pytest.raises(MeshError):
        build_online_mesh((0, 0, 1, 1), 0)


def test_online_orientation_and_diagonal():
    m = build_online_mesh((0, 0, 1, 1), 5)
    assert np.all(m.signed_areas() > 0)
    # both triangles of every square share the lower-left/upper-right diagonal
    p = m.vertices[m.triangles]
    lower, upper = p[0::2], p[1::2]
    assert np.allclose(lower[:, 0], upper[:, 0]) and np.allclose(lower[:, 2], upper[:, 1])
    d = lower[:, 2] - lower[:, 0]
    assert np.all(d[:, 0] > 0) and np.allclose(d[:, 0], d[:, 1])


def test_online_locate_reference_coordinates():
    m = build_online_mesh((0, 0, 1, 1), 4)
    rng = np.random.default_rng(3)
    x = rng.uniform(0, 1, (500, 2))
    tri, ref = m.locate(x)
    p = m.vertices[m.triangles[tri]]
    back = p[:, 0] + ref[:, :1] * (p[:, 1] - p[:, 0]) + ref[:, 1:] * (p[:, 2] - p[:, 0])
    assert np.allclose(back, x)
    assert np.all(ref >= -1e-14) and np.all(ref.sum(1) <= 1 + 1e-14)


def test_sampling_threshold():
    assert [sampling_threshold(m) for m in (1, 2, 3)] == [5, 7, 13]
    assert sampling_threshold(3, 3) == 27
    with pytest.raises(ValueError):
        sampling_threshold(4)
    with pytest.raises(ValueError):
        sampling_threshold(1, 3)


def test_patch_examples():
    mesh = build_offline_mesh((0, 0, 1, 1), 10)
    k = mesh.element_id(5, 5)
    p = build_patch(mesh, k, 5)
    assert p.depth == 1 and p.n_samples == 9
    p = build_patch(mesh, k, 13)
    assert p.depth == 2 and p.n_samples == 25
    p = build_patch(mesh, 0, 5)
    assert p.depth == 2 and p.n_samples == 9


def test_patch_errors():
    mesh = build_offline_mesh((0, 0, 1, 1), 2)
    with pytest.raises(MeshError):
        build_patch(mesh, 0, 5)
    with pytest.raises(MeshError):
        build_patch(mesh, 4, 1)
    with pytest.raises(MeshError):
        build_patch(mesh, 0, 0)


def test_min_extent_grows_boundary_patch():
    mesh = build_offline_mesh((0, 0, 1, 1), 10)
    literal = build_patch(mesh, 2, 13)
    assert literal.n_samples == 15  # 5 x 3 block against the bottom edge
    grown = build_patch(mesh, 2, 13, min_extent=4)
    cols = {c for c, _ in map(mesh.col_row, grown.members)}
    rows = {r for _, r in map(mesh.col_row, grown.members)}
    assert len(cols) >= 4 and len(rows) >= 4


@settings(max_examples=40, deadline=None)
@given(q=st.integers(3, 12), data=st.data())
def test_patch_matches_literal_recursion(q, data):
    mesh = build_offline_mesh((0, 0, 1, 1), q)
    k = data.draw(st.integers(0, q * q - 1))
    n_lowest = data.draw(st.integers(1, q * q))
    p = build_patch(mesh, k, n_lowest)
    assert set(p.members) == moore_layers(mesh, k, p.depth)
    if p.depth > 0:
        assert len(moore_layers(mesh, k, p.depth - 1)) < n_lowest
    assert k in p.members
    assert np.allclose(p.points, mesh.barycenters[list(p.members)])
    assert p.R >= p.r > 0
    assert np.all(p.contains(p.points))


def test_interior_layer_counts():
    mesh = build_offline_mesh((0, 0, 1, 1), 11)
    k = mesh.element_id(5, 5)
    for t in range(6):
        assert len(moore_layers(mesh, k, t)) == (2 * t + 1) ** 2


def test_cardinality_bounds():
    for q in (6, 13):
        mesh = build_offline_mesh((0, 0, 1, 1), q)
        h_k = mesh.diameters[0]
        sigma = mesh.chunkiness()  # diameter / inscribed radius
        assert sigma == pytest.approx(2 * math.sqrt(2))
        for m in (1, 2, 3):
            for p in build_all_patches(mesh, sampling_threshold(m), m + 1):
                assert p.n_samples * mesh.element_area <= math.pi * p.R**2
                assert p.n_samples <= (sigma * p.R / h_k) ** 2


def test_cardinality_with_diameter_ratio_fails_for_depth_one():
    # diameter over inscribed diameter gives sqrt(2); the bound then undercounts a 3x3 patch
    mesh = build_offline_mesh((0, 0, 1, 1), 6)
    p = build_patch(mesh, mesh.element_id(2, 2), 5)
    assert (math.sqrt(2) * p.R / mesh.diameters[0]) ** 2 == pytest.approx(4.5)
    assert p.n_samples == 9


def test_locate_examples():
    mesh = build_offline_mesh((0, 0, 1, 1), 10)
    assert mesh.col_row(locate(mesh, (0.51, 0.49))) == (5, 4)
    assert locate(mesh, (0.0, 0.0)) == 0
    assert mesh.col_row(locate(mesh, (0.4, 0.55))) == (3, 5)
    assert locate(mesh, (1.0, 1.0)) == 99
    with pytest.raises(MeshError):
        locate(mesh, (1.0 + 1e-9, 0.5))


def test_locate_barycenters():
    mesh = build_offline_mesh((-1, 2, 3, 5), 9)
    assert np.array_equal(locate(mesh, mesh.barycenters), np.arange(81))


def test_patch_determinism_and_json():
    mesh = build_offline_mesh((0, 0, 1, 1), 6)
    a = build_all_patches(mesh, 7)
    b = build_all_patches(mesh, 7)
    assert [p.members for p in a] == [p.members for p in b]
    d = json.loads(mesh_summary_json(mesh, a))
    assert d["q"] == 6 and len(d["patches"]) == 36
