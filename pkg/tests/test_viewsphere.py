import math

import numpy as np
import pytest

from synthdet.viewsphere import PoseSpace, scale_distances, subdivide_icosahedron, viewpoint_rotation

from oracles import brute_force_subdivision


@pytest.mark.parametrize("level,count", [(0, 12), (1, 42), (2, 162)])
def test_vertex_counts_match_brute_force(level, count):
    sphere = subdivide_icosahedron(level)
    oracle = np.array(brute_force_subdivision(level))
    assert len(sphere.vertices) == len(oracle) == count
    # same point sets, not just the same counts
    d = np.linalg.norm(sphere.vertices[:, None, :] - oracle[None, :, :], axis=2)
    assert d.min(axis=1).max() < 1e-9


@pytest.mark.parametrize("level", range(5))
def test_count_formula_and_unit_length(level):
    v = subdivide_icosahedron(level).vertices
    assert len(v) == 10 * 4 ** level + 2
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0, atol=1e-6)


def test_no_duplicates_and_near_uniform():
    v = subdivide_icosahedron(1).vertices
    ang = np.arccos(np.clip(v @ v.T, -1, 1))
    np.fill_diagonal(ang, np.inf)
    nearest = ang.min(axis=1)
    assert nearest.min() > 0
    assert abs(nearest.min() - nearest.mean()) / nearest.mean() < 0.25


def test_level_bounds():
    with pytest.raises(ValueError):
        subdivide_icosahedron(6)
    with pytest.raises(ValueError):
        subdivide_icosahedron(-1)


def test_viewpoint_rotation_identity_and_period():
    np.testing.assert_allclose(viewpoint_rotation((0, 0, 1), 0.0), np.eye(3), atol=1e-12)
    rng = np.random.default_rng(0)
    for _ in range(20):
        v = rng.normal(size=3)
        v /= np.linalg.norm(v)
        np.testing.assert_allclose(viewpoint_rotation(v, 2 * math.pi), viewpoint_rotation(v, 0.0), atol=1e-6)


def test_viewpoint_rotation_maps_axis_to_vertex():
    for v in subdivide_icosahedron(1).vertices:
        r = viewpoint_rotation(v, 0.7)
        np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(r) > 0
        np.testing.assert_allclose(r @ [0, 0, 1], v, atol=1e-12)


def test_viewpoint_rotation_injective():
    space = PoseSpace.build(1, 8, 1, 6.0, 6.0)
    mats = np.array([space.view_rotation(v, k).ravel()
                     for v in range(space.num_views) for k in range(space.inplane_steps)])
    d = np.linalg.norm(mats[:, None] - mats[None], axis=2)
    np.fill_diagonal(d, np.inf)
    assert d.min() > 1e-3


def test_scale_distances():
    np.testing.assert_array_equal(scale_distances(2.0, 6.0, 2), [2.0, 6.0])
    np.testing.assert_allclose(scale_distances(2.0, 6.0, 3), [2.0, 3.0, 6.0], atol=1e-12)
    d = scale_distances(6.0, 24.0, 7)
    assert d[0] == 6.0 and d[-1] == 24.0
    steps = np.diff(1.0 / d)
    assert np.abs(steps - steps[0]).max() < 1e-9


def test_pose_space_shape():
    space = PoseSpace.build()
    assert (space.num_views, space.inplane_steps, space.num_scales) == (42, 8, 4)
    assert space.size == 42 * 8 * 4
    np.testing.assert_allclose(np.diff(space.inplane_angles), 2 * math.pi / 8)
    assert list(space.scale_distances) == sorted(space.scale_distances)
    with pytest.raises(ValueError):
        PoseSpace(space.sphere, 8, (10.0, 6.0))


def test_upper_hemisphere_mask():
    space = PoseSpace.build(1, 8, 2, hemisphere="upper")
    assert (space.sphere.vertices[:, 2] >= 0).all()
    assert space.num_views < 42
