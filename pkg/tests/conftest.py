from __future__ import annotations

import numpy as np
import pytest

from meshtex.geometry import Mesh, compute_vertex_normals, normalize_to_unit_sphere
from meshtex import procedural


def make_scatter_mesh(rng: np.random.Generator, n_tris: int = 50, tri_size: float = 0.04) -> Mesh:
    """n small tangent triangles scattered on the unit sphere, one UV grid
    cell each, no mutual occlusion at the sizes used here."""
    centers = rng.normal(size=(n_tris, 3))
    centers /= np.linalg.norm(centers, axis=1, keepdims=True)
    # tangent frame per center
    helper = np.where(np.abs(centers[:, :1]) < 0.9, [[1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]])
    t1 = np.cross(centers, helper)
    t1 /= np.linalg.norm(t1, axis=1, keepdims=True)
    t2 = np.cross(centers, t1)
    ang = rng.uniform(0.0, 2.0 * np.pi, size=n_tris)
    verts = []
    for k in range(3):
        a = ang + 2.0 * np.pi * k / 3.0
        verts.append(centers + tri_size * (np.cos(a)[:, None] * t1 + np.sin(a)[:, None] * t2))
    vertices = np.stack(verts, axis=1).reshape(-1, 3)
    triangles = np.arange(3 * n_tris, dtype=np.int32).reshape(-1, 3)

    # flip windings so face normals point away from the origin
    tri = vertices[triangles]
    fn = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    flip = np.einsum("ij,ij->i", fn, centers) < 0
    triangles[flip] = triangles[flip][:, ::-1]

    side = int(np.ceil(np.sqrt(n_tris)))
    cell = 1.0 / side
    uvs = np.zeros((3 * n_tris, 2))
    for t in range(n_tris):
        cx, cy = (t % side) * cell, (t // side) * cell
        m = 0.15 * cell
        uvs[3 * t + 0] = (cx + m, cy + m)
        uvs[3 * t + 1] = (cx + cell - m, cy + m)
        uvs[3 * t + 2] = (cx + cell / 2.0, cy + cell - m)
    normals = compute_vertex_normals(vertices, triangles)
    return Mesh(
        vertices=vertices,
        normals=normals,
        uv_coords=uvs,
        triangles=triangles,
        uv_indices=triangles.copy(),
        part_ids=np.zeros(n_tris, dtype=np.int32),
        part_names=["scatter"],
        physical_size=1.0,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_sphere() -> Mesh:
    return normalize_to_unit_sphere(procedural.uv_sphere(rings=12, segments=14))


@pytest.fixture(scope="session")
def armchair_mesh() -> Mesh:
    return normalize_to_unit_sphere(procedural.armchair())


@pytest.fixture(scope="session")
def material_db(tmp_path_factory) -> str:
    root = tmp_path_factory.mktemp("matdb")
    procedural.build_material_db(root, materials_per_category=1, presets=4, map_size=32)
    return str(root)
