"""Per-part material retrieval and assignment.

For each part: place a camera as frontal as the part allows, render the
textured mesh, crop the largest square patch inside the part, extract query
features, and search the material database inside the category an LLM
backend suggested for the part. The chosen material is applied by physical
tiling and triplanar projection; exports are either a JSON manifest or baked
texture maps.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests as _requests
from scipy import ndimage

from . import matindex
from .atlas import bake_texel_geometry
from .geometry import Mesh, part_extent
from .imageops import bilinear_sample, load_png, save_png
from .raster import rasterize, render_textured
from .views import Camera

log = logging.getLogger(__name__)

PATCH_SIZE = 224
MIN_MASK_PIXELS = 32 * 32
FRAME_FILL = 0.7
NORMAL_DEGENERATE = 0.1
DEFAULT_SHARPNESS = 4.0
DEFAULT_HEIGHT_AMPLITUDE_M = 0.02
HEIGHT_MID = 0.5
MANIFEST_VERSION = 1
FIXTURE_PREFIX = "fixtures:"

_MAP_DEFAULTS = {
    "basecolor": (0.5, 0.5, 0.5),
    "normal": (0.5, 0.5, 1.0),
    "roughness": (0.5,),
    "metallic": (0.0,),
    "height": (0.5,),
}


class AssignmentError(Exception):
    pass


@dataclass
class PartAssignment:
    part_id: int
    part_name: str
    material_id: str
    preset_id: str
    category: str
    distance: float
    uv_scale: float  # world (model) units per material tile
    tiling: float  # tiles across the part's largest extent
    triplanar_sharpness: float = DEFAULT_SHARPNESS
    height_mid: float = HEIGHT_MID
    height_amplitude_m: float = DEFAULT_HEIGHT_AMPLITUDE_M
    crop_flagged: bool = False

    def __post_init__(self):
        if self.uv_scale <= 0:
            raise ValueError("uv_scale must be positive")
        if not 0.0 <= self.height_mid <= 1.0:
            raise ValueError("height_mid must be in [0, 1]")


@dataclass
class CategorySuggestion:
    categories: dict = field(default_factory=dict)  # part name -> category
    physical_size_m: float | None = None


def frontal_camera(mesh: Mesh, part: str, *, vertical_fov: float = 40.0) -> Camera:
    """Camera looking at the part down its area-weighted mean normal.

    Distance fits the part's bounding sphere into FRAME_FILL of the frame.
    A degenerate mean normal (closed surfaces like full spheres) falls back
    to the +Z axis.
    """
    tsel = mesh.triangles_of(part)
    if not len(tsel):
        raise AssignmentError(f"part {part!r} has no triangles")
    areas = mesh.face_areas()[tsel]
    normals = mesh.face_normals()[tsel]
    total = areas.sum()
    if total <= 0:
        direction = np.array([0.0, 0.0, 1.0])
        centroid = mesh.vertices[mesh.triangles[tsel]].mean(axis=(0, 1))
    else:
        mean_n = (normals * areas[:, None]).sum(axis=0) / total
        if np.linalg.norm(mean_n) < NORMAL_DEGENERATE:
            direction = np.array([0.0, 0.0, 1.0])
        else:
            direction = mean_n / np.linalg.norm(mean_n)
        centroids = mesh.vertices[mesh.triangles[tsel]].mean(axis=1)
        centroid = (centroids * areas[:, None]).sum(axis=0) / total
    verts = mesh.vertices[np.unique(mesh.triangles[tsel])]
    radius = float(np.linalg.norm(verts - centroid, axis=1).max())
    half = np.tan(np.deg2rad(vertical_fov) / 2.0)
    dist = radius / (FRAME_FILL * half) if radius > 1e-9 else 1.0
    return Camera(position=centroid + direction * dist, target=centroid, vertical_fov=vertical_fov)


def crop_patch(render: np.ndarray, part_mask: np.ndarray, *, out_size: int = PATCH_SIZE) -> tuple[np.ndarray, bool]:
    """Largest axis-aligned square inside the mask, resized to out_size.

    The square is centered on the chessboard-distance-transform maximum
    (image borders count as background). Masks smaller than MIN_MASK_PIXELS
    fall back to a bbox crop padded to square, flagged True.
    """
    from .imageops import resize

    mask = np.asarray(part_mask, dtype=bool)
    if not mask.any():
        raise AssignmentError("part is not visible in the render")
    img = render if render.ndim == 3 else np.repeat(render[..., None], 3, axis=2)
    if mask.sum() < MIN_MASK_PIXELS:
        ys, xs = np.nonzero(mask)
        y0, y1, x0, x1 = ys.min(), ys.max() + 1, xs.min(), xs.max() + 1
        crop = img[y0:y1, x0:x1]
        h, w = crop.shape[:2]
        side = max(h, w)
        pad = np.ones((side, side, 3), dtype=crop.dtype)
        pad[(side - h) // 2 : (side - h) // 2 + h, (side - w) // 2 : (side - w) // 2 + w] = crop
        return resize(pad, (out_size, out_size)), True
    padded = np.pad(mask, 1)
    dt = ndimage.distance_transform_cdt(padded, metric="chessboard")[1:-1, 1:-1]
    m = int(dt.max())
    cy, cx = np.unravel_index(int(np.argmax(dt)), dt.shape)
    half = m - 1
    crop = img[cy - half : cy + half + 1, cx - half : cx + half + 1]
    return resize(crop, (out_size, out_size)), False


def suggest_categories(
    object_name: str,
    part_names: list[str],
    categories: list[str],
    endpoint: str | None = None,
    *,
    timeout: float = 60.0,
    want_size: bool = True,
) -> CategorySuggestion:
    """Ask the LLM backend for one material category per part.

    `endpoint` is None (everything uncategorized), "fixtures:<path>" (JSON
    fixture keyed by object then part name), or an HTTP URL posting
    {object, parts, categories, want_size} -> {parts: {...}, physical_size_m}.
    Replies outside the known category set snap case-insensitively, then
    fall back to uncategorized; the HTTP path retries once.
    """
    if not part_names:
        return CategorySuggestion()
    raw: dict = {}
    size = None
    if endpoint is None:
        raw = {}
    elif endpoint.startswith(FIXTURE_PREFIX):
        path = Path(endpoint[len(FIXTURE_PREFIX) :])
        fixtures = json.loads(path.read_text())
        entry = fixtures.get(object_name, {})
        raw = dict(entry.get("parts", {}))
        size = entry.get("physical_size_m")
    else:
        payload = {
            "object": object_name,
            "parts": list(part_names),
            "categories": list(categories),
            "want_size": want_size,
        }
        for attempt in range(2):
            try:
                resp = _requests.post(endpoint, json=payload, timeout=timeout)
                resp.raise_for_status()
                body = resp.json()
                raw = dict(body.get("parts", {}))
                size = body.get("physical_size_m")
                break
            except (_requests.RequestException, ValueError) as exc:
                if attempt == 1:
                    log.warning("category backend failed twice (%s); using uncategorized", exc)
                    raw = {}
    lower = {c.lower(): c for c in categories}
    out = {}
    for name in part_names:
        cat = raw.get(name, matindex.UNCATEGORIZED)
        if cat in categories:
            out[name] = cat
        elif isinstance(cat, str) and cat.lower() in lower:
            out[name] = lower[cat.lower()]
        else:
            out[name] = matindex.UNCATEGORIZED
    return CategorySuggestion(categories=out, physical_size_m=size)


def tiling_factor(part_extent_m: float, material_size_m: float) -> float:
    """Tiles across the part: its physical extent over the material's
    physical tile size. Dimensionless, so uniform rescaling of both sizes
    leaves it unchanged."""
    if part_extent_m <= 0 or material_size_m <= 0:
        raise ValueError("sizes must be positive")
    return part_extent_m / material_size_m


def triplanar_coords(points, normals, uv_scale: float, sharpness: float = DEFAULT_SHARPNESS):
    """Project points onto the YZ/XZ/XY planes in tile units.

    Returns (uvs, weights): uvs[..., axis, :] is the UV pair for that axis,
    weights are |n|^sharpness normalized to sum 1 (equal thirds for a zero
    normal). Sign flips of the normal do not change the weights.
    """
    p = np.asarray(points, dtype=np.float64) / uv_scale
    n = np.asarray(normals, dtype=np.float64)
    uvs = np.stack(
        [
            np.stack([p[..., 1], p[..., 2]], axis=-1),
            np.stack([p[..., 0], p[..., 2]], axis=-1),
            np.stack([p[..., 0], p[..., 1]], axis=-1),
        ],
        axis=-2,
    )
    w = np.abs(n) ** sharpness
    s = w.sum(axis=-1, keepdims=True)
    w = np.where(s > 0, w / np.where(s > 0, s, 1.0), 1.0 / 3.0)
    return uvs, w


def normalize_height(height_map: np.ndarray) -> tuple[np.ndarray, float]:
    """Remap a height map so its median sits at 0.5 and the p1..p99 span
    covers 0.05..0.95 (piecewise linear around the median, clamped to [0,1]).
    Constant maps become constant 0.5."""
    h = np.asarray(height_map, dtype=np.float64)
    p1, med, p99 = np.percentile(h, [1.0, 50.0, 99.0])
    if p99 - p1 < 1e-12:
        return np.full_like(h, HEIGHT_MID, dtype=np.float32), HEIGHT_MID
    out = np.empty_like(h)
    lo_span = med - p1
    hi_span = p99 - med
    below = h <= med
    if lo_span > 1e-12:
        out[below] = 0.5 - (med - h[below]) / lo_span * 0.45
    else:
        out[below] = 0.5
    if hi_span > 1e-12:
        out[~below] = 0.5 + (h[~below] - med) / hi_span * 0.45
    else:
        out[~below] = 0.5
    return np.clip(out, 0.0, 1.0).astype(np.float32), HEIGHT_MID


def sample_triplanar(map_img: np.ndarray, points, normals, uv_scale: float, sharpness: float = DEFAULT_SHARPNESS) -> np.ndarray:
    """Blend wrap-mode bilinear samples of a tiling map across the three
    projection axes."""
    uvs, w = triplanar_coords(points, normals, uv_scale, sharpness)
    mh, mw = map_img.shape[:2]
    channels = 1 if map_img.ndim == 2 else map_img.shape[2]
    flat_uv = uvs.reshape(-1, 3, 2)
    flat_w = w.reshape(-1, 3)
    acc = np.zeros((len(flat_uv), channels), dtype=np.float64)
    for axis in range(3):
        x = flat_uv[:, axis, 0] * mw - 0.5
        y = flat_uv[:, axis, 1] * mh - 0.5
        smp = bilinear_sample(map_img, x, y, wrap=True)
        if smp.ndim == 1:
            smp = smp[:, None]
        acc += flat_w[:, axis : axis + 1] * smp
    out_shape = np.asarray(points).shape[:-1] + ((channels,) if channels > 1 else ())
    return acc.reshape(out_shape).astype(np.float32)


def _load_map(index: matindex.MaterialIndex, rec: matindex.MaterialRecord, name: str):
    rel = rec.maps.get(name)
    if rel is None:
        return None
    img = load_png(Path(index.root) / rel)
    if name == "basecolor":
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=2)
        img = np.clip(img * np.asarray(rec.basecolor_scale, dtype=np.float32), 0.0, 1.0)
    if name == "height":
        if img.ndim == 3:
            img = img.mean(axis=2)
        img, _ = normalize_height(img)
    return img


def assign_materials(
    mesh: Mesh,
    index: matindex.MaterialIndex,
    atlas,
    *,
    object_name: str = "object",
    llm_endpoint: str | None = None,
    embed_endpoint: str = matindex.MOCK_EMBED,
    w: float = matindex.DEFAULT_W,
    render_resolution: int = 512,
) -> tuple[list[PartAssignment], CategorySuggestion]:
    """Retrieve one material per part from its frontal textured render."""
    suggestion = suggest_categories(object_name, mesh.part_names, index.categories(), llm_endpoint)
    mpu = mesh.meters_per_unit()
    if suggestion.physical_size_m and mesh.physical_size is None:
        mpu = suggestion.physical_size_m / max(mesh.max_extent(), 1e-9)
    assignments = []
    for pid, name in enumerate(mesh.part_names):
        cam = frontal_camera(mesh, name)
        buffers = rasterize(mesh, cam, render_resolution)
        render = render_textured(mesh, atlas, cam, render_resolution, buffers=buffers)
        part_mask = buffers.mask & np.isin(buffers.tri_id, mesh.triangles_of(name))
        patch, flagged = crop_patch(render, part_mask)
        query = matindex.compute_query_features(patch, embed_endpoint=embed_endpoint)
        category = suggestion.categories.get(name, matindex.UNCATEGORIZED)
        try:
            ranked = matindex.search(index, query, category, w)
        except matindex.UnknownCategoryError:
            ranked = matindex.search(index, query, matindex.UNCATEGORIZED, w)
            category = matindex.UNCATEGORIZED
        rec, dist = ranked[0]
        extent_m = part_extent(mesh, name) * mpu
        tiles = tiling_factor(extent_m, rec.physical_size)
        assignments.append(
            PartAssignment(
                part_id=pid,
                part_name=name,
                material_id=rec.id,
                preset_id=rec.preset_id,
                category=category,
                distance=dist,
                uv_scale=rec.physical_size / mpu,
                tiling=tiles,
                crop_flagged=flagged,
            )
        )
    return assignments, suggestion


def export_assignment(
    mesh: Mesh,
    assignments: list[PartAssignment],
    index: matindex.MaterialIndex,
    out_dir,
    mode: str = "manifest",
    *,
    atlas_resolution: int = 1024,
) -> dict:
    """Write the assignment to disk.

    manifest mode: JSON with per-part material references. baked mode: the
    manifest plus one texture set at atlas resolution, each texel sampled
    from its own part's material maps by triplanar projection.
    """
    if mode not in ("manifest", "baked"):
        raise ValueError(f"unknown export mode {mode!r}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    by_part = {a.part_id: a for a in assignments}
    missing = [name for pid, name in enumerate(mesh.part_names) if pid not in by_part]
    if missing:
        raise AssignmentError(f"parts without assignment: {missing}")

    manifest = {
        "version": MANIFEST_VERSION,
        "mode": mode,
        "object_physical_size_m": mesh.physical_size,
        "parts": [
            {
                "part_id": a.part_id,
                "part_name": a.part_name,
                "material_id": a.material_id,
                "preset_id": a.preset_id,
                "category": a.category,
                "distance": round(a.distance, 9),
                "uv_scale": a.uv_scale,
                "tiling": a.tiling,
                "triplanar_sharpness": a.triplanar_sharpness,
                "height_mid": a.height_mid,
                "height_amplitude_m": a.height_amplitude_m,
                "maps": index.get(a.material_id, a.preset_id).maps,
            }
            for a in sorted(assignments, key=lambda a: a.part_id)
        ],
    }
    files = {"manifest": out_dir / "assignment.json"}
    if mode == "baked":
        baked = bake_assignment(mesh, assignments, index, atlas_resolution)
        for name, img in baked.items():
            path = out_dir / f"baked_{name}.png"
            save_png(path, img)
            files[name] = path
        manifest["baked_maps"] = {name: f"baked_{name}.png" for name in baked}
    files["manifest"].write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return files


def bake_assignment(mesh: Mesh, assignments: list[PartAssignment], index: matindex.MaterialIndex, resolution: int) -> dict:
    """Sample every part's material into one texture set in UV space."""
    atlas = bake_texel_geometry(mesh, resolution)
    part_of_tri = mesh.part_ids
    ys, xs = np.nonzero(atlas.occupied)
    tex_part = part_of_tri[atlas.tri_id[ys, xs]]
    out = {
        "basecolor": np.full((resolution, resolution, 3), 0.5, dtype=np.float32),
        "normal": np.zeros((resolution, resolution, 3), dtype=np.float32),
        "roughness": np.full((resolution, resolution), 0.5, dtype=np.float32),
        "metallic": np.zeros((resolution, resolution), dtype=np.float32),
        "height": np.full((resolution, resolution), 0.5, dtype=np.float32),
    }
    out["normal"][..., :] = _MAP_DEFAULTS["normal"]
    for a in assignments:
        sel = tex_part == a.part_id
        if not sel.any():
            continue
        py, px = ys[sel], xs[sel]
        pts = atlas.world_pos[py, px].astype(np.float64)
        nrm = atlas.normal[py, px].astype(np.float64)
        rec = index.get(a.material_id, a.preset_id)
        for name in out:
            img = _load_map(index, rec, name)
            if img is None:
                default = _MAP_DEFAULTS[name]
                smp = np.broadcast_to(np.asarray(default, dtype=np.float32), (len(py), len(default)))
                smp = smp[:, 0] if len(default) == 1 else smp
            else:
                smp = sample_triplanar(img, pts, nrm, a.uv_scale, a.triplanar_sharpness)
            out[name][py, px] = smp
    return out


def render_assignment(mesh: Mesh, assignments: list[PartAssignment], index: matindex.MaterialIndex, camera: Camera, resolution: int) -> np.ndarray:
    """Reference render sampling part materials directly per pixel (the
    manifest-mode semantics, bypassing any baked texture)."""
    buffers = rasterize(mesh, camera, resolution)
    out = np.ones((resolution, resolution, 3), dtype=np.float32)
    if not buffers.mask.any():
        return out
    ys, xs = np.nonzero(buffers.mask)
    tid = buffers.tri_id[ys, xs]
    bary = buffers.bary[ys, xs].astype(np.float64)
    nrm = np.einsum("nk,nkj->nj", bary, mesh.normals[mesh.triangles[tid]])
    nrm /= np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-20)
    pts = buffers.world_pos[ys, xs].astype(np.float64)
    part_of_pix = mesh.part_ids[tid]
    for a in assignments:
        sel = part_of_pix == a.part_id
        if not sel.any():
            continue
        rec = index.get(a.material_id, a.preset_id)
        img = _load_map(index, rec, "basecolor")
        if img is None:
            continue
        smp = sample_triplanar(img, pts[sel], nrm[sel], a.uv_scale, a.triplanar_sharpness)
        out[ys[sel], xs[sel]] = smp
    return out
