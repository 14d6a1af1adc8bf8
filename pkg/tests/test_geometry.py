from __future__ import annotations

import numpy as np
import pytest

from meshtex import procedural
from meshtex.geometry import (
    DegenerateMeshError,
    MissingUVsError,
    UnknownPartError,
    load_mesh,
    normalize_to_unit_sphere,
    part_extent,
    part_surface_area,
    write_mesh,
)


def test_obj_round_trip(tmp_path, armchair_mesh):
    path = tmp_path / "chair.obj"
    write_mesh(path, armchair_mesh)
    back = load_mesh(path)
    assert back.part_names == armchair_mesh.part_names
    assert back.num_triangles == armchair_mesh.num_triangles
    np.testing.assert_allclose(back.vertices, armchair_mesh.vertices, atol=1e-5)
    np.testing.assert_allclose(back.uv_coords, armchair_mesh.uv_coords, atol=1e-6)
    np.testing.assert_array_equal(back.part_ids, armchair_mesh.part_ids)


def test_normalize_to_unit_sphere_centers_and_scales():
    mesh = procedural.box(size=(4.0, 2.0, 1.0), center=(10.0, -3.0, 5.0))
    normed = normalize_to_unit_sphere(mesh)
    center = (normed.vertices.max(axis=0) + normed.vertices.min(axis=0)) / 2.0
    np.testing.assert_allclose(center, 0.0, atol=1e-12)
    radii = np.linalg.norm(normed.vertices, axis=1)
    assert radii.max() == pytest.approx(1.0, abs=1e-12)


def test_normalize_is_idempotent():
    mesh = normalize_to_unit_sphere(procedural.armchair())
    again = normalize_to_unit_sphere(mesh)
    np.testing.assert_allclose(again.vertices, mesh.vertices, atol=1e-12)
    assert again.unit_scale == pytest.approx(mesh.unit_scale)


def test_normalize_tracks_unit_scale_for_physical_units():
    mesh = procedural.box(size=(2.0, 2.0, 2.0), physical_size=3.0)
    normed = normalize_to_unit_sphere(mesh)
    # model extent 2 maps to sqrt(3) diameter; physical size survives
    assert normed.physical_size == 3.0
    assert normed.meters_per_unit() == pytest.approx(3.0 / normed.max_extent())


def test_degenerate_mesh_rejected():
    mesh = procedural.box()
    flat = mesh
    flat.vertices = np.zeros_like(mesh.vertices)
    with pytest.raises(DegenerateMeshError):
        normalize_to_unit_sphere(flat)


def test_parts_and_triangle_lookup(armchair_mesh):
    assert armchair_mesh.part_names == ["cushion", "frame"]
    tris_a = armchair_mesh.triangles_of("cushion")
    tris_b = armchair_mesh.triangles_of("frame")
    assert len(tris_a) + len(tris_b) == armchair_mesh.num_triangles
    assert not set(tris_a.tolist()) & set(tris_b.tolist())
    with pytest.raises(UnknownPartError):
        armchair_mesh.triangles_of("wings")


def test_part_extent_and_area(armchair_mesh):
    for name in armchair_mesh.part_names:
        assert 0.0 < part_extent(armchair_mesh, name) <= 2.0
        area, frac = part_surface_area(armchair_mesh, name)
        assert area > 0.0
        assert 0.0 < frac < 1.0


def test_missing_uvs_raises(tmp_path):
    path = tmp_path / "plain.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 3\n")
    with pytest.raises(MissingUVsError):
        load_mesh(path)


def test_vertex_normals_unit_length(small_sphere):
    lens = np.linalg.norm(small_sphere.normals, axis=1)
    np.testing.assert_allclose(lens, 1.0, atol=1e-9)


def test_sphere_has_no_degenerate_faces(small_sphere):
    tri = small_sphere.vertices[small_sphere.triangles]
    doubled_area = np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)
    assert doubled_area.min() > 1e-9
    # all faces wound outward
    centroids = tri.mean(axis=1)
    fn = small_sphere.face_normals()
    assert (np.einsum("ij,ij->i", fn, centroids) > 0).all()
