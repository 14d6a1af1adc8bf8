"""Triangle meshes with UVs and per-part labels: loading, validation,
normalization and area bookkeeping.

The mesh file format is a Wavefront-style text format: `v`, `vt`, `vn`, `f`
and `g` records. Face groups become part labels. An optional JSON sidecar
`<stem>.meta.json` carries `physical_size_m` and part display names.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

DEFAULT_PHYSICAL_SIZE_M = 1.0


class MeshError(Exception):
    """Base class for mesh input problems."""


class MeshParseError(MeshError):
    pass


class MissingUVsError(MeshError):
    """The file has no UV channel (or a face without UV corners)."""


class EmptyMeshError(MeshError):
    pass


class DegenerateMeshError(MeshError):
    pass


class UnknownPartError(MeshError):
    pass


@dataclass
class Mesh:
    """Immutable-by-convention triangle mesh.

    vertices: (V, 3) float64, model units
    normals: (V, 3) float64 unit vectors
    uv_coords: (U, 2) float64 in [0, 1]^2
    triangles: (T, 3) int32 vertex indices
    uv_indices: (T, 3) int32 indices into uv_coords (one UV corner per
        triangle corner)
    part_ids: (T,) int32 index into part_names
    physical_size: largest bounding-box extent in meters, or None if unknown
    unit_scale: cumulative scale applied to the original model units
    """

    vertices: np.ndarray
    normals: np.ndarray
    uv_coords: np.ndarray
    triangles: np.ndarray
    uv_indices: np.ndarray
    part_ids: np.ndarray
    part_names: list[str]
    physical_size: float | None = None
    unit_scale: float = 1.0
    _corner_uvs: np.ndarray | None = field(default=None, repr=False, compare=False)

    @property
    def num_triangles(self) -> int:
        return int(self.triangles.shape[0])

    @property
    def parts(self) -> list[str]:
        return list(self.part_names)

    def corner_uvs(self) -> np.ndarray:
        """Per-corner UVs, shape (T, 3, 2)."""
        if self._corner_uvs is None:
            object.__setattr__(self, "_corner_uvs", self.uv_coords[self.uv_indices])
        return self._corner_uvs

    def triangles_of(self, part: str) -> np.ndarray:
        """Triangle indices belonging to `part`."""
        if part not in self.part_names:
            raise UnknownPartError(f"unknown part {part!r}")
        pid = self.part_names.index(part)
        return np.flatnonzero(self.part_ids == pid)

    def face_normals(self) -> np.ndarray:
        """Unit face normals, (T, 3); zero for degenerate triangles."""
        v = self.vertices
        t = self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        length = np.linalg.norm(n, axis=1, keepdims=True)
        return np.where(length > 1e-20, n / np.maximum(length, 1e-20), 0.0)

    def face_areas(self) -> np.ndarray:
        v = self.vertices
        t = self.triangles
        n = np.cross(v[t[:, 1]] - v[t[:, 0]], v[t[:, 2]] - v[t[:, 0]])
        return 0.5 * np.linalg.norm(n, axis=1)

    def bbox(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def max_extent(self) -> float:
        lo, hi = self.bbox()
        return float((hi - lo).max())

    def meters_per_unit(self) -> float:
        """Conversion from current model units to meters.

        Uses physical_size over the largest bbox extent; falls back to 1 m
        with a warning when the size is unknown.
        """
        size = self.physical_size
        if size is None:
            log.warning("mesh has no physical size; assuming %.1f m", DEFAULT_PHYSICAL_SIZE_M)
            size = DEFAULT_PHYSICAL_SIZE_M
        extent = self.max_extent()
        if extent <= 0:
            raise DegenerateMeshError("mesh has zero extent")
        return size / extent

    def validate(self) -> None:
        t, u = self.triangles, self.uv_indices
        if t.shape[0] == 0:
            raise EmptyMeshError("mesh has no triangles")
        if t.min() < 0 or t.max() >= len(self.vertices):
            raise MeshParseError("triangle vertex index out of range")
        if u.shape != t.shape:
            raise MissingUVsError("every triangle needs three UV corners")
        if u.min() < 0 or u.max() >= len(self.uv_coords):
            raise MeshParseError("triangle UV index out of range")
        if self.part_ids.shape[0] != t.shape[0]:
            raise MeshParseError("part labels must cover every triangle")
        if self.part_ids.min() < 0 or self.part_ids.max() >= len(self.part_names):
            raise MeshParseError("part id out of range")


def compute_vertex_normals(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    """Area-weighted vertex normals (the cross product carries the area weight)."""
    n = np.zeros_like(vertices)
    face = np.cross(
        vertices[triangles[:, 1]] - vertices[triangles[:, 0]],
        vertices[triangles[:, 2]] - vertices[triangles[:, 0]],
    )
    for k in range(3):
        np.add.at(n, triangles[:, k], face)
    length = np.linalg.norm(n, axis=1, keepdims=True)
    return np.where(length > 1e-20, n / np.maximum(length, 1e-20), np.array([0.0, 0.0, 1.0]))


def _parse_face_corner(token: str) -> tuple[int, int | None, int | None]:
    parts = token.split("/")
    try:
        vi = int(parts[0])
        ti = int(parts[1]) if len(parts) > 1 and parts[1] else None
        ni = int(parts[2]) if len(parts) > 2 and parts[2] else None
    except ValueError as e:
        raise MeshParseError(f"bad face corner {token!r}") from e
    return vi, ti, ni


def _resolve(idx: int, count: int, what: str) -> int:
    out = idx - 1 if idx > 0 else count + idx
    if out < 0 or out >= count:
        raise MeshParseError(f"{what} index {idx} out of range (have {count})")
    return out


def load_mesh(path) -> Mesh:
    """Load a mesh file; computes normals when absent and reads the sidecar.

    Raises MissingUVsError when any face lacks UV corners, EmptyMeshError
    for a file with no faces, MeshParseError on malformed records.
    """
    path = Path(path)
    verts: list[list[float]] = []
    uvs: list[list[float]] = []
    vnorms: list[list[float]] = []
    tris: list[list[int]] = []
    tri_uvs: list[list[int]] = []
    tri_norms: list[list[int] | None] = []
    part_of: list[int] = []
    part_names: list[str] = []
    current_part = None

    def part_index(name: str) -> int:
        if name not in part_names:
            part_names.append(name)
        return part_names.index(name)

    try:
        text = path.read_text()
    except OSError as e:
        raise MeshParseError(f"cannot read {path}: {e}") from e

    missing_uv = False
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        fields = line.split()
        tag = fields[0]
        try:
            if tag == "v":
                verts.append([float(x) for x in fields[1:4]])
            elif tag == "vt":
                uvs.append([float(x) for x in fields[1:3]])
            elif tag == "vn":
                vnorms.append([float(x) for x in fields[1:4]])
            elif tag in ("g", "o"):
                current_part = fields[1] if len(fields) > 1 else "default"
            elif tag == "f":
                corners = [_parse_face_corner(tok) for tok in fields[1:]]
                if len(corners) < 3:
                    raise MeshParseError(f"line {lineno}: face with <3 corners")
                if current_part is None:
                    current_part = "default"
                pid = part_index(current_part)
                # fan-triangulate polygons
                for a, b in zip(corners[1:-1], corners[2:]):
                    fan = [corners[0], a, b]
                    tris.append([_resolve(c[0], len(verts), "vertex") for c in fan])
                    if any(c[1] is None for c in fan):
                        missing_uv = True
                        tri_uvs.append([0, 0, 0])
                    else:
                        tri_uvs.append([_resolve(c[1], len(uvs), "uv") for c in fan])
                    if all(c[2] is not None for c in fan):
                        tri_norms.append([_resolve(c[2], len(vnorms), "normal") for c in fan])
                    else:
                        tri_norms.append(None)
                    part_of.append(pid)
        except (ValueError, IndexError) as e:
            raise MeshParseError(f"line {lineno}: {raw!r}") from e

    if not tris:
        raise EmptyMeshError(f"{path} contains no faces")
    if missing_uv or not uvs:
        raise MissingUVsError(f"{path} has faces without UV coordinates")

    vertices = np.asarray(verts, dtype=np.float64)
    uv_coords = np.asarray(uvs, dtype=np.float64)
    triangles = np.asarray(tris, dtype=np.int32)
    uv_indices = np.asarray(tri_uvs, dtype=np.int32)
    part_ids = np.asarray(part_of, dtype=np.int32)

    if vnorms and all(tn is not None for tn in tri_norms):
        # average the per-corner normals onto vertices
        vn = np.asarray(vnorms, dtype=np.float64)
        normals = np.zeros_like(vertices)
        counts = np.zeros(len(vertices))
        for tri, tn in zip(triangles, tri_norms):
            for vi, ni in zip(tri, tn):
                normals[vi] += vn[ni]
                counts[vi] += 1
        nz = counts > 0
        normals[nz] /= counts[nz, None]
        length = np.linalg.norm(normals, axis=1, keepdims=True)
        normals = np.where(length > 1e-20, normals / np.maximum(length, 1e-20), np.array([0.0, 0.0, 1.0]))
    else:
        normals = compute_vertex_normals(vertices, triangles)

    physical_size = None
    meta_path = path.with_suffix(".meta.json")
    if meta_path.exists():
        try:
            meta = json.loads(meta_path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise MeshParseError(f"bad sidecar {meta_path}: {e}") from e
        physical_size = meta.get("physical_size_m")
        renames = meta.get("part_names", {})
        part_names = [renames.get(name, name) for name in part_names]

    mesh = Mesh(
        vertices=vertices,
        normals=normals,
        uv_coords=uv_coords,
        triangles=triangles,
        uv_indices=uv_indices,
        part_ids=part_ids,
        part_names=part_names,
        physical_size=physical_size,
    )
    mesh.validate()
    return mesh


def write_mesh(path, mesh: Mesh) -> None:
    """Write the mesh back out in the interchange format (round-trip safe)."""
    lines = []
    for v in mesh.vertices:
        lines.append("v %.9g %.9g %.9g" % tuple(v))
    for uv in mesh.uv_coords:
        lines.append("vt %.9g %.9g" % tuple(uv))
    for n in mesh.normals:
        lines.append("vn %.9g %.9g %.9g" % tuple(n))
    last_part = -1
    for i in range(mesh.num_triangles):
        pid = int(mesh.part_ids[i])
        if pid != last_part:
            lines.append(f"g {mesh.part_names[pid]}")
            last_part = pid
        t = mesh.triangles[i] + 1
        u = mesh.uv_indices[i] + 1
        lines.append(
            "f %d/%d/%d %d/%d/%d %d/%d/%d"
            % (t[0], u[0], t[0], t[1], u[1], t[1], t[2], u[2], t[2])
        )
    Path(path).write_text("\n".join(lines) + "\n")
    if mesh.physical_size is not None:
        meta = {"physical_size_m": mesh.physical_size}
        Path(path).with_suffix(".meta.json").write_text(json.dumps(meta))


def normalize_to_unit_sphere(mesh: Mesh) -> Mesh:
    """Center on the bounding-box center and scale so max vertex norm is 1.

    Normals are untouched; the applied scale is accumulated in unit_scale.
    """
    lo, hi = mesh.bbox()
    center = 0.5 * (lo + hi)
    shifted = mesh.vertices - center
    radius = float(np.linalg.norm(shifted, axis=1).max())
    if radius < 1e-12:
        raise DegenerateMeshError("all vertices coincide; cannot normalize")
    scale = 1.0 / radius
    return replace(
        mesh,
        vertices=shifted * scale,
        unit_scale=mesh.unit_scale * scale,
        _corner_uvs=None,
    )


def part_surface_area(mesh: Mesh, part: str) -> tuple[float, float]:
    """(3D area, UV area) summed over the part's triangles."""
    tri_idx = mesh.triangles_of(part)
    area3d = float(mesh.face_areas()[tri_idx].sum())
    uv = mesh.corner_uvs()[tri_idx]
    e1 = uv[:, 1] - uv[:, 0]
    e2 = uv[:, 2] - uv[:, 0]
    area_uv = float((0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])).sum())
    return area3d, area_uv


def part_extent(mesh: Mesh, part: str) -> float:
    """Largest bounding-box extent of the part, in current model units."""
    tri_idx = mesh.triangles_of(part)
    verts = mesh.vertices[np.unique(mesh.triangles[tri_idx])]
    return float((verts.max(axis=0) - verts.min(axis=0)).max())
