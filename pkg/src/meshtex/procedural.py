"""Deterministic fixture factories: analytic meshes with clean UV charts, a
synthetic material database, and category fixtures for the LLM mock.

Everything here is seeded and reproducible; tests and the demo scripts build
their inputs from these instead of shipping binary assets.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .genproto import value_noise
from .geometry import Mesh, compute_vertex_normals
from .imageops import save_png

CATEGORIES_16 = (
    "ceramic",
    "concrete",
    "fabric",
    "glass",
    "ground",
    "leather",
    "marble",
    "metal",
    "paper",
    "plaster",
    "plastic",
    "rubber",
    "stone",
    "terracotta",
    "wicker",
    "wood",
)


def uv_sphere(rings: int = 50, segments: int = 52, *, radius: float = 1.0, part_names: tuple = ("upper", "lower"), physical_size: float | None = 1.0) -> Mesh:
    """Lat-long sphere with a full-square UV chart, split into an upper and a
    lower part at the equator. Defaults give 2*52*49 = 5096 triangles."""
    ii, jj = np.meshgrid(np.arange(rings + 1), np.arange(segments + 1), indexing="ij")
    theta = np.pi * ii / rings
    phi = 2.0 * np.pi * jj / segments
    x = np.sin(theta) * np.cos(phi)
    y = np.cos(theta)
    z = np.sin(theta) * np.sin(phi)
    verts = radius * np.stack([x, y, z], axis=-1).reshape(-1, 3)
    uvs = np.stack([jj / segments, 1.0 - ii / rings], axis=-1).reshape(-1, 2)

    def vid(i, j):
        return i * (segments + 1) + j

    tris = []
    for i in range(rings):
        for j in range(segments):
            a, b = vid(i, j), vid(i + 1, j)
            c, d = vid(i + 1, j + 1), vid(i, j + 1)
            # drop the half whose two corners collapse onto a pole vertex
            if i < rings - 1:
                tris.append((a, c, b))
            if i > 0:
                tris.append((a, d, c))
    triangles = np.asarray(tris, dtype=np.int32)
    centroids_y = verts[triangles].mean(axis=1)[:, 1]
    part_ids = np.where(centroids_y >= 0, 0, 1).astype(np.int32)
    normals = verts / np.maximum(np.linalg.norm(verts, axis=1, keepdims=True), 1e-20)
    return Mesh(
        vertices=verts,
        normals=normals,
        uv_coords=uvs,
        triangles=triangles,
        uv_indices=triangles.copy(),
        part_ids=part_ids,
        part_names=list(part_names),
        physical_size=physical_size,
    )


_BOX_FACES = (
    # (axis, sign): quad corners in CCW order seen from outside
    (0, +1),
    (0, -1),
    (1, +1),
    (1, -1),
    (2, +1),
    (2, -1),
)


def box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), *, uv_rect=(0.0, 0.0, 1.0, 1.0), name: str = "box", physical_size: float | None = 1.0) -> Mesh:
    """Axis-aligned box; the six faces chart into a 3x2 grid inside uv_rect
    (u0, v0, u1, v1) with a small margin so charts never touch."""
    half = np.asarray(size, dtype=np.float64) / 2.0
    c = np.asarray(center, dtype=np.float64)
    u0, v0, u1, v1 = uv_rect
    cw = (u1 - u0) / 3.0
    ch = (v1 - v0) / 2.0
    margin = 0.06
    verts, uvs, tris = [], [], []
    for fi, (axis, sign) in enumerate(_BOX_FACES):
        a1, a2 = (axis + 1) % 3, (axis + 2) % 3
        corners = []
        for s1, s2 in ((-1, -1), (1, -1), (1, 1), (-1, 1)):
            p = c.copy()
            p[axis] += sign * half[axis]
            p[a1] += s1 * half[a1]
            p[a2] += s2 * half[a2]
            corners.append(p)
        col, row = fi % 3, fi // 3
        cu0 = u0 + (col + margin) * cw
        cv0 = v0 + (row + margin) * ch
        cu1 = u0 + (col + 1 - margin) * cw
        cv1 = v0 + (row + 1 - margin) * ch
        base = len(verts)
        verts.extend(corners)
        uvs.extend([(cu0, cv0), (cu1, cv0), (cu1, cv1), (cu0, cv1)])
        # outward winding depends on the face sign
        if sign > 0:
            quads = ((0, 1, 2), (0, 2, 3))
        else:
            quads = ((0, 2, 1), (0, 3, 2))
        for t in quads:
            tris.append(tuple(base + k for k in t))
    vertices = np.asarray(verts)
    triangles = np.asarray(tris, dtype=np.int32)
    mesh = Mesh(
        vertices=vertices,
        normals=compute_vertex_normals(vertices, triangles),
        uv_coords=np.asarray(uvs),
        triangles=triangles,
        uv_indices=triangles.copy(),
        part_ids=np.zeros(len(triangles), dtype=np.int32),
        part_names=[name],
        physical_size=physical_size,
    )
    return mesh


def merge_parts(parts: list[tuple[Mesh, str]], physical_size: float | None = 1.0) -> Mesh:
    """Concatenate single-part meshes into one multi-part mesh. Callers are
    responsible for giving each part a disjoint UV region."""
    verts, norms, uvs, tris, uvi, pids, names = [], [], [], [], [], [], []
    v_off = u_off = 0
    for pid, (m, name) in enumerate(parts):
        verts.append(m.vertices)
        norms.append(m.normals)
        uvs.append(m.uv_coords)
        tris.append(m.triangles + v_off)
        uvi.append(m.uv_indices + u_off)
        pids.append(np.full(m.num_triangles, pid, dtype=np.int32))
        names.append(name)
        v_off += len(m.vertices)
        u_off += len(m.uv_coords)
    return Mesh(
        vertices=np.concatenate(verts),
        normals=np.concatenate(norms),
        uv_coords=np.concatenate(uvs),
        triangles=np.concatenate(tris),
        uv_indices=np.concatenate(uvi),
        part_ids=np.concatenate(pids),
        part_names=names,
        physical_size=physical_size,
    )


def armchair(physical_size: float = 1.0) -> Mesh:
    """Two-box toy armchair: a cushion sitting on a frame. Part names match
    the category fixtures."""
    cushion = box((0.9, 0.25, 0.9), (0.0, 0.35, 0.0), uv_rect=(0.0, 0.5, 1.0, 1.0), name="cushion")
    frame = box((1.0, 0.5, 1.0), (0.0, 0.0, 0.0), uv_rect=(0.0, 0.0, 1.0, 0.5), name="frame")
    return merge_parts([(cushion, "cushion"), (frame, "frame")], physical_size=physical_size)


def flat_plate(size: float = 1.0, *, name: str = "plate") -> Mesh:
    """Single quad facing +Z."""
    h = size / 2.0
    vertices = np.array([[-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0]])
    triangles = np.array([[0, 1, 2], [0, 2, 3]], dtype=np.int32)
    uvs = np.array([[0.05, 0.05], [0.95, 0.05], [0.95, 0.95], [0.05, 0.95]])
    return Mesh(
        vertices=vertices,
        normals=np.tile([0.0, 0.0, 1.0], (4, 1)),
        uv_coords=uvs,
        triangles=triangles,
        uv_indices=triangles.copy(),
        part_ids=np.zeros(2, dtype=np.int32),
        part_names=[name],
        physical_size=size,
    )


def open_cylinder(segments: int = 48, *, radius: float = 0.4, height: float = 1.2, name: str = "side") -> Mesh:
    """Cylinder side wall (no caps), axis along Y."""
    jj = np.arange(segments + 1)
    phi = 2.0 * np.pi * jj / segments
    ring = np.stack([radius * np.cos(phi), np.zeros_like(phi), radius * np.sin(phi)], axis=-1)
    bottom = ring + [0.0, -height / 2.0, 0.0]
    top = ring + [0.0, height / 2.0, 0.0]
    vertices = np.concatenate([bottom, top])
    u = 0.05 + 0.9 * jj / segments
    uvs = np.concatenate(
        [np.stack([u, np.full_like(u, 0.05)], axis=-1), np.stack([u, np.full_like(u, 0.95)], axis=-1)]
    )
    tris = []
    n = segments + 1
    for j in range(segments):
        a, b, c, d = j, j + 1, n + j, n + j + 1
        tris.append((a, c, b))
        tris.append((b, c, d))
    triangles = np.asarray(tris, dtype=np.int32)
    normals = vertices.copy()
    normals[:, 1] = 0.0
    normals /= np.maximum(np.linalg.norm(normals, axis=1, keepdims=True), 1e-20)
    return Mesh(
        vertices=vertices,
        normals=normals,
        uv_coords=uvs,
        triangles=triangles,
        uv_indices=triangles.copy(),
        part_ids=np.zeros(len(triangles), dtype=np.int32),
        part_names=[name],
        physical_size=None,
    )


# -- synthetic material database ----------------------------------------------


def _pattern(rng: np.random.Generator, size: int, kind: str, colors: np.ndarray) -> np.ndarray:
    yy, xx = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    t = None
    if kind == "stripes":
        period = int(rng.integers(8, 24))
        t = ((xx // period) % 2).astype(np.float64)
    elif kind == "checker":
        period = int(rng.integers(8, 20))
        t = (((xx // period) + (yy // period)) % 2).astype(np.float64)
    elif kind == "blobs":
        pts = np.stack([xx, yy, np.zeros_like(xx)], axis=-1).reshape(-1, 3) / size
        t = value_noise(pts, float(rng.uniform(2.0, 5.0)), int(rng.integers(0, 2**63))).reshape(size, size)
        t = (t > np.median(t)).astype(np.float64)
    else:
        t = (xx + yy).astype(np.float64) / (2 * size - 2)
    img = colors[0][None, None, :] * (1.0 - t[..., None]) + colors[1][None, None, :] * t[..., None]
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def build_material_db(
    root,
    *,
    materials_per_category: int = 1,
    presets: int = 4,
    map_size: int = 64,
    seed: int = 7,
    categories: tuple = CATEGORIES_16,
) -> Path:
    """Write a synthetic material database under `root`.

    Default settings give 16 categories x 1 material x 4 presets = 64
    records. Maps are small PNGs with per-material deterministic patterns.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    kinds = ("stripes", "checker", "blobs", "ramp")
    scales = ((1.0, 1.0, 1.0), (0.75, 0.85, 1.0), (1.0, 0.8, 0.65), (0.7, 1.0, 0.8))
    for ci, cat in enumerate(categories):
        for mi in range(materials_per_category):
            rng = np.random.default_rng([seed, ci, mi])
            mat_id = f"{cat}_{mi:02d}"
            mdir = root / mat_id
            mdir.mkdir(exist_ok=True)
            colors = rng.uniform(0.1, 0.9, size=(2, 3))
            kind = kinds[int(rng.integers(0, len(kinds)))]
            base = _pattern(rng, map_size, kind, colors)
            save_png(mdir / "basecolor.png", base)
            save_png(mdir / "roughness.png", np.full((map_size, map_size), float(rng.uniform(0.2, 0.9)), dtype=np.float32))
            save_png(mdir / "metallic.png", np.full((map_size, map_size), 1.0 if cat == "metal" else 0.0, dtype=np.float32))
            height = base.mean(axis=2)
            save_png(mdir / "height.png", height)
            normal = np.zeros((map_size, map_size, 3), dtype=np.float32)
            normal[..., 2] = 1.0
            save_png(mdir / "normal.png", normal * 0.5 + 0.5)
            meta = {
                "category": cat,
                "physical_size_m": round(float(rng.uniform(0.3, 2.0)), 3),
                "presets": [
                    {"id": f"p{k}", "basecolor_scale": list(scales[k])} for k in range(presets)
                ],
            }
            (mdir / "material.json").write_text(json.dumps(meta, indent=1, sort_keys=True) + "\n")
    return root


DEFAULT_LLM_FIXTURES = {
    "armchair": {
        "parts": {"cushion": "fabric", "frame": "wood"},
        "physical_size_m": 1.0,
    },
    "sphere": {
        "parts": {"upper": "ceramic", "lower": "ceramic"},
        "physical_size_m": 1.0,
    },
}


def build_llm_fixtures(path, fixtures: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(fixtures or DEFAULT_LLM_FIXTURES, indent=1, sort_keys=True) + "\n")
    return path
