import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from PIL import Image

from synthdet.assets import box_mesh, ellipsoid_mesh
from synthdet.geometry import (BBox, BehindCameraError, CameraIntrinsics, MeshNotFoundError, MissingTextureError,
                               Pose, TexturedMesh, TriangleIndexError, ZeroExtentError, load_mesh,
                               normalize_mesh, perturb_intrinsics, project_bbox, projected_diameter,
                               radius_for_diameter, random_rotation, save_mesh)

from oracles import bbox_scalar

TEX = np.full((4, 4, 3), 128, np.uint8)


def write_obj(tmp_path, body, texture=True, name="m"):
    (tmp_path / f"{name}.mtl").write_text(f"newmtl mat\nKd 0.5 0.5 0.5\n" + ("map_Kd tex.png\n" if texture else ""))
    Image.fromarray(TEX).save(tmp_path / "tex.png")
    path = tmp_path / f"{name}.obj"
    path.write_text(f"mtllib {name}.mtl\nusemtl mat\n" + body)
    return path


def test_load_single_triangle(tmp_path):
    path = write_obj(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nvt 0 0\nvt 1 0\nvt 0 1\nf 1/1 2/2 3/3\n")
    mesh = load_mesh(path)
    assert mesh.triangles.shape == (1, 3)
    assert mesh.vertices.shape == (3, 3)
    assert mesh.texture.shape == (4, 4, 3)


def test_missing_normals_are_area_weighted(tmp_path):
    # two triangles sharing vertex 1; face normals computed by hand:
    # A = (0,0,0),(2,0,0),(0,1,0): cross = (0,0,2), area 1
    # B = (0,0,0),(0,0,3),(2,0,0) (normal -y): cross = (0,6,0) with reversed orientation -> (0,-6,0)... see below
    body = ("v 0 0 0\nv 2 0 0\nv 0 1 0\nv 0 0 3\n"
            "f 1 2 3\nf 1 4 2\n")
    mesh = load_mesh(write_obj(tmp_path, body))
    # face A normal (area-weighted, twice-area length): (2,0,0)x(0,1,0) = (0,0,2)
    # face B: (0,0,3)x(2,0,0) = (0*0-3*0, 3*2-0*0, 0*0-0*2) = (0,6,0)
    # vertex 1 sees both: (0,6,2)/|.|; vertex 3 only A: (0,0,1); vertex 4 only B: (0,1,0)
    expected = {(0.0, 0.0, 0.0): np.array([0, 6, 2]) / math.sqrt(40), (0.0, 1.0, 0.0): np.array([0, 0, 1.0]),
                (0.0, 0.0, 3.0): np.array([0, 1.0, 0])}
    for v, n in zip(mesh.vertices, mesh.normals):
        if tuple(v) in expected:
            np.testing.assert_allclose(n, expected[tuple(v)], atol=1e-12)
    np.testing.assert_allclose(np.linalg.norm(mesh.normals, axis=1), 1.0, atol=1e-4)


def test_index_out_of_range(tmp_path):
    with pytest.raises(TriangleIndexError, match="7"):
        load_mesh(write_obj(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 7\n"))


def test_distinct_errors(tmp_path):
    with pytest.raises(MeshNotFoundError):
        load_mesh(tmp_path / "nope.obj")
    with pytest.raises(MissingTextureError):
        load_mesh(write_obj(tmp_path, "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n", texture=False, name="nt"))


def test_quad_faces_are_fan_triangulated(tmp_path):
    mesh = load_mesh(write_obj(tmp_path, "v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n"))
    assert len(mesh.triangles) == 2


def test_save_load_roundtrip(tmp_path):
    mesh = box_mesh(1, 2, 3, TEX)
    loaded = load_mesh(save_mesh(mesh, tmp_path / "box.obj"))
    np.testing.assert_allclose(np.sort(loaded.vertices, axis=0), np.sort(mesh.vertices, axis=0))
    assert len(loaded.triangles) == len(mesh.triangles)


def test_normalize_cube():
    mesh = box_mesh(2, 2, 2, TEX)  # corners at (+-1, +-1, +-1)
    out = normalize_mesh(mesh)
    np.testing.assert_allclose(out.vertices, mesh.vertices / math.sqrt(3), atol=1e-12)
    np.testing.assert_allclose(out.vertices.mean(axis=0), 0, atol=1e-12)


def test_normalize_idempotent():
    once = normalize_mesh(box_mesh(1, 2, 3, TEX))
    assert normalize_mesh(once) is once


def test_normalize_random_cloud():
    rng = np.random.default_rng(0)
    verts = rng.normal(size=(100, 3)) * 5 + 3
    mesh = TexturedMesh(verts, np.tile([0, 0, 1.0], (100, 1)), np.zeros((100, 2)), [[0, 1, 2]], TEX)
    out = normalize_mesh(mesh).vertices
    assert np.abs(out.mean(axis=0)).max() < 1e-6
    assert abs(max(math.sqrt(sum(c * c for c in v)) for v in out) - 1.0) < 1e-6


def test_normalize_zero_extent():
    mesh = TexturedMesh(np.ones((3, 3)), np.tile([0, 0, 1.0], (3, 1)), np.zeros((3, 2)), [[0, 1, 2]], TEX)
    with pytest.raises(ZeroExtentError):
        normalize_mesh(mesh)


def test_perturb_intrinsics():
    base = CameraIntrinsics.default()
    assert perturb_intrinsics(base, np.random.default_rng(0), 0.0) == base
    rng = np.random.default_rng(1)
    for _ in range(1000):
        c = perturb_intrinsics(base, rng, 0.05)
        for a, b in ((c.fx, base.fx), (c.fy, base.fy), (c.cx, base.cx), (c.cy, base.cy)):
            assert abs(a - b) <= 0.05 * b + 1e-9
    with pytest.raises(ValueError):
        perturb_intrinsics(base, rng, 0.3)


def test_camera_invariants():
    with pytest.raises(ValueError):
        CameraIntrinsics(0, 500, 10, 10, 20, 20)
    with pytest.raises(ValueError):
        CameraIntrinsics(500, 500, 20, 10, 20, 20)
    cam = CameraIntrinsics.default()
    assert (cam.width, cam.height) == (960, 720)


def test_pose_invariants():
    with pytest.raises(ValueError):
        Pose((1, 0, 0, 0.1), (0, 0, 1))
    with pytest.raises(ValueError):
        Pose((1, 0, 0, 0), (0, 0, -1))


def fibonacci_sphere(n):
    k = np.arange(n) + 0.5
    z = 1 - 2 * k / n
    r = np.sqrt(1 - z * z)
    phi = math.pi * (1 + math.sqrt(5)) * k
    return np.stack([r * np.cos(phi), r * np.sin(phi), z], axis=1)


def test_unit_sphere_bbox():
    cam = CameraIntrinsics(500, 500, 480, 360, 960, 720)
    pose = Pose((1, 0, 0, 0), (0, 0, 4))
    # oracle: dense sphere samples projected
    pts = fibonacci_sphere(400_000) + [0, 0, 4]
    u = 500 * pts[:, 0] / pts[:, 2] + 480
    oracle_half = (u.max() - u.min()) / 2
    assert abs(oracle_half - 500 / math.sqrt(15)) < 0.05
    sphere = ellipsoid_mesh(1, 1, 1, TEX, rings=96, segments=192)
    box, trunc = project_bbox(sphere, pose, cam)
    assert trunc == 0
    assert abs((box.x0 + box.x1) / 2 - 480) < 1e-6 and abs((box.y0 + box.y1) / 2 - 360) < 0.05
    assert abs(box.width / 2 - oracle_half) < 0.1
    assert abs(box.width / 2 - 129.1) < 0.1


def test_truncation_on_left_border():
    # principal point on the border keeps the projection symmetric about it
    cam = CameraIntrinsics(500, 500, 0, 360, 960, 720)
    mesh = box_mesh(1, 1, 1, TEX)
    pose = Pose((1, 0, 0, 0), cam.ray_point(0.0, 360.0, 5.0))
    box, trunc = project_bbox(mesh, pose, cam)
    # oracle: pixel counts of the unclipped projected hull (a box) versus the clipped one
    _, _, full = bbox_scalar(mesh.vertices, (1, 0, 0, 0), pose.translation, 1.0, 500, 500, 0, 360, 960, 720)
    xs = np.arange(math.floor(full[0]), math.ceil(full[2])) + 0.5
    ys = np.arange(math.floor(full[1]), math.ceil(full[3])) + 0.5
    inside = ((xs >= full[0]) & (xs <= full[2]))[None, :] & ((ys >= full[1]) & (ys <= full[3]))[:, None]
    in_image = (xs >= 0)[None, :] & np.ones(len(ys), bool)[:, None]
    pixel_trunc = 1 - (inside & in_image).sum() / inside.sum()
    assert abs(trunc - 0.5) < 0.02
    assert abs(trunc - pixel_trunc) < 0.02


def test_behind_camera():
    cam = CameraIntrinsics.default()
    with pytest.raises(BehindCameraError):
        project_bbox(box_mesh(1, 1, 1, TEX), Pose((1, 0, 0, 0), (0, 0, 0.2)), cam)


def test_diameter_roundtrip():
    for p, z, f in ((100, 10, 920), (800, 6, 500), (3, 30, 1000)):
        assert abs(projected_diameter(radius_for_diameter(p, z, f), z, f) - p) < 1e-9


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), scale=st.floats(0.2, 2.0),
       tx=st.floats(-3, 3), ty=st.floats(-3, 3), tz=st.floats(4, 30))
def test_project_bbox_matches_scalar_oracle(seed, scale, tx, ty, tz):
    rng = np.random.default_rng(seed)
    mesh = normalize_mesh(box_mesh(*rng.uniform(0.3, 2, 3), TEX))
    pose = Pose.from_matrix(random_rotation(rng), (tx, ty, tz))
    cam = CameraIntrinsics(920, 910, 480, 360, 960, 720)
    box, trunc = project_bbox(mesh, pose, cam, scale)
    ref, ref_trunc, _ = bbox_scalar(mesh.vertices.tolist(), pose.quaternion, pose.translation, scale,
                                    920, 910, 480, 360, 960, 720, mesh.triangles.tolist())
    np.testing.assert_allclose([box.x0, box.y0, box.x1, box.y1], ref, atol=1e-4)
    assert abs(trunc - ref_trunc) < 1e-6
    if 0 < ref[0] and ref[2] < 960 and 0 < ref[1] and ref[3] < 720:
        assert trunc == 0


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_rigid_invariance(seed):
    rng = np.random.default_rng(seed)
    mesh = normalize_mesh(box_mesh(*rng.uniform(0.3, 2, 3), TEX))
    r_mesh = random_rotation(rng)
    r_pose = random_rotation(rng)
    t = (rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(5, 10))
    rotated = TexturedMesh(mesh.vertices @ r_mesh.T, mesh.normals @ r_mesh.T, mesh.uvs, mesh.triangles, TEX)
    cam = CameraIntrinsics.default()
    a, _ = project_bbox(mesh, Pose.from_matrix(r_pose, t), cam)
    b, _ = project_bbox(rotated, Pose.from_matrix(r_pose @ r_mesh.T, t), cam)
    np.testing.assert_allclose([a.x0, a.y0, a.x1, a.y1], [b.x0, b.y0, b.x1, b.y1], atol=1e-4)


def test_bbox_helpers():
    a, b = BBox(0, 0, 10, 10), BBox(5, 5, 20, 20)
    assert a.intersection(b) == 25
    assert a.clip(8, 8) == BBox(0, 0, 8, 8)
    assert b.xywh() == [5, 5, 15, 15]
