"""UV-space texture accumulation.

The atlas stores per-texel color plus the geometry (triangle, barycentric,
world position, normal) baked once per mesh, and the coverage state used by
the completion pass. Colors are gathered texel-to-view: each occupied texel
projects into the candidate views and samples where it is visible.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import Mesh
from .imageops import bilinear_sample, save_png, to_u8
from .views import SCORE_DELTA, Camera, texel_visibility

log = logging.getLogger(__name__)

DEFAULT_RESOLUTION = 1024
VISIBILITY_EPS = 0.005  # 0.5% of scene radius (meshes are unit-normalized)
THETA_MIN = 0.2  # grazing cutoff, cosine
UNCOVERED_GRAY = 0.5
GUTTER_TEXELS = 2


class AtlasError(Exception):
    pass


@dataclass
class TextureAtlas:
    resolution: int
    color: np.ndarray  # (R, R, 3) float32
    weight: np.ndarray  # (R, R) float32, number of accumulated samples
    best_alignment: np.ndarray  # (R, R) float32 cosine
    occupied: np.ndarray  # (R, R) bool, texel center inside a UV chart
    tri_id: np.ndarray  # (R, R) int32, -1 outside charts
    bary: np.ndarray  # (R, R, 3) float32
    world_pos: np.ndarray  # (R, R, 3) float32
    normal: np.ndarray  # (R, R, 3) float32
    corner_uvs: np.ndarray  # (T, 3, 2) copied from the mesh
    tri_normal: np.ndarray  # (T, 3) face normals
    tri_centroid: np.ndarray  # (T, 3)
    _occ_idx: np.ndarray | None = field(default=None, repr=False, compare=False)

    def occupied_indices(self) -> np.ndarray:
        """Flat indices of occupied texels (cached)."""
        if self._occ_idx is None:
            self._occ_idx = np.flatnonzero(self.occupied.reshape(-1))
        return self._occ_idx

    def uv_to_xy(self, uv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """UV in [0,1]^2 to fractional texel coordinates (x right, y down).

        Row 0 holds v=1 so exported PNGs read top-down without a flip.
        """
        uv = np.asarray(uv)
        x = uv[..., 0] * self.resolution - 0.5
        y = (1.0 - uv[..., 1]) * self.resolution - 0.5
        return x, y

    def num_uncovered(self) -> int:
        return int(np.count_nonzero(self.occupied & (self.weight == 0)))

    def display_color(self, gutter: int = GUTTER_TEXELS) -> np.ndarray:
        """Render-ready copy: uncovered occupied texels mid-gray, covered
        colors bled `gutter` texels outward to hide bilinear seams."""
        out = np.full_like(self.color, UNCOVERED_GRAY)
        covered = self.occupied & (self.weight > 0)
        out[covered] = self.color[covered]
        have = covered.copy()
        for _ in range(gutter):
            acc = np.zeros_like(out)
            cnt = np.zeros(out.shape[:2], dtype=np.float32)
            for dy, dx in ((0, 1), (0, -1), (1, 0), (-1, 0), (1, 1), (1, -1), (-1, 1), (-1, -1)):
                shifted = np.roll(np.roll(out, dy, axis=0), dx, axis=1)
                smask = np.roll(np.roll(have, dy, axis=0), dx, axis=1)
                # roll wraps; kill wrapped rows/cols
                if dy == 1:
                    smask[0, :] = False
                elif dy == -1:
                    smask[-1, :] = False
                if dx == 1:
                    smask[:, 0] = False
                elif dx == -1:
                    smask[:, -1] = False
                acc += np.where(smask[..., None], shifted, 0.0)
                cnt += smask
            new = ~have & (cnt > 0)
            out[new] = acc[new] / cnt[new, None]
            have |= new
        return out

    def export_png(self, path, coverage_path=None) -> None:
        save_png(path, self.display_color())
        if coverage_path is not None:
            save_png(coverage_path, coverage_mask(self).astype(np.float32))


def bake_texel_geometry(mesh: Mesh, resolution: int = DEFAULT_RESOLUTION) -> TextureAtlas:
    """Rasterize the mesh's UV charts into the atlas grid.

    Each occupied texel records the triangle owning it plus its interpolated
    surface point and normal. Overlapping charts resolve first-triangle-wins
    with a logged warning.
    """
    res = resolution
    uvs = mesh.corner_uvs().astype(np.float64)  # (T, 3, 2)
    x = uvs[..., 0] * res - 0.5
    y = (1.0 - uvs[..., 1]) * res - 0.5
    tv = np.stack([x, y], axis=-1)  # (T, 3, 2) texel coords

    lo = np.clip(np.floor(tv.min(axis=1)).astype(np.int64), 0, res)
    hi = np.clip(np.ceil(tv.max(axis=1)).astype(np.int64) + 1, 0, res)
    w = np.maximum(hi[:, 0] - lo[:, 0], 0)
    h = np.maximum(hi[:, 1] - lo[:, 1], 0)
    area = w * h
    keep = area > 0
    tids = np.flatnonzero(keep)
    tv, lo, w, area = tv[keep], lo[keep], w[keep], area[keep]

    occupied = np.zeros((res, res), dtype=bool)
    tri_img = np.full((res, res), -1, dtype=np.int32)
    bary_img = np.zeros((res, res, 3), dtype=np.float32)

    if len(tids):
        total = int(area.sum())
        rep = np.repeat(np.arange(len(tids)), area)
        starts = np.concatenate([[0], np.cumsum(area)[:-1]])
        offset = np.arange(total) - np.repeat(starts, area)
        wr = np.repeat(w, area)
        px = np.repeat(lo[:, 0], area) + offset % wr
        py = np.repeat(lo[:, 1], area) + offset // wr

        a, b, c = tv[rep, 0], tv[rep, 1], tv[rep, 2]

        def edge(p, q, sx, sy):
            return (q[:, 0] - p[:, 0]) * (sy - p[:, 1]) - (q[:, 1] - p[:, 1]) * (sx - p[:, 0])

        w0 = edge(b, c, px, py)
        w1 = edge(c, a, px, py)
        w2 = edge(a, b, px, py)
        den = edge(b, c, a[:, 0], a[:, 1])
        inside = (np.abs(den) > 1e-15) & (
            ((w0 >= 0) & (w1 >= 0) & (w2 >= 0) & (den > 0))
            | ((w0 <= 0) & (w1 <= 0) & (w2 <= 0) & (den < 0))
        )
        w0, w1, w2, den = w0[inside], w1[inside], w2[inside], den[inside]
        px, py, rep = px[inside], py[inside], rep[inside]
        flat = py * res + px
        order = np.lexsort((tids[rep], flat))
        flat_sorted = flat[order]
        first = np.ones(len(flat_sorted), dtype=bool)
        first[1:] = flat_sorted[1:] != flat_sorted[:-1]
        overlaps = len(flat_sorted) - int(first.sum())
        if overlaps:
            log.warning("UV charts overlap on %d texels; keeping first triangle", overlaps)
        win = order[first]
        fy, fx = flat[win] // res, flat[win] % res
        occupied[fy, fx] = True
        tri_img[fy, fx] = tids[rep[win]].astype(np.int32)
        bary_img[fy, fx, 0] = w0[win] / den[win]
        bary_img[fy, fx, 1] = w1[win] / den[win]
        bary_img[fy, fx, 2] = w2[win] / den[win]

    if not occupied.any():
        raise AtlasError("mesh UVs cover no texels at this resolution")

    ys, xs = np.nonzero(occupied)
    tid = tri_img[ys, xs]
    bw = bary_img[ys, xs].astype(np.float64)
    tri_verts = mesh.vertices[mesh.triangles[tid]]
    tri_norms = mesh.normals[mesh.triangles[tid]]
    wpos = np.einsum("nk,nkj->nj", bw, tri_verts)
    nrm = np.einsum("nk,nkj->nj", bw, tri_norms)
    nrm /= np.maximum(np.linalg.norm(nrm, axis=1, keepdims=True), 1e-20)

    world_pos = np.full((res, res, 3), np.nan, dtype=np.float32)
    normal = np.zeros((res, res, 3), dtype=np.float32)
    world_pos[ys, xs] = wpos.astype(np.float32)
    normal[ys, xs] = nrm.astype(np.float32)

    fn = mesh.face_normals()
    centroids = mesh.vertices[mesh.triangles].mean(axis=1)
    return TextureAtlas(
        resolution=res,
        color=np.zeros((res, res, 3), dtype=np.float32),
        weight=np.zeros((res, res), dtype=np.float32),
        best_alignment=np.zeros((res, res), dtype=np.float32),
        occupied=occupied,
        tri_id=tri_img,
        bary=bary_img,
        world_pos=world_pos,
        normal=normal,
        corner_uvs=mesh.corner_uvs().copy(),
        tri_normal=fn,
        tri_centroid=centroids,
    )


def _texel_view_samples(atlas: TextureAtlas, image, buffers, camera, *, eps, theta_min):
    """Visibility and bilinear color samples of occupied texels in one view.

    Samples whose bilinear footprint touches a background pixel are dropped:
    generated backgrounds are white and would bleed into silhouette texels.
    """
    idx = atlas.occupied_indices()
    pos = atlas.world_pos.reshape(-1, 3)[idx].astype(np.float64)
    nrm = atlas.normal.reshape(-1, 3)[idx].astype(np.float64)
    visible, align, x, y = texel_visibility(
        pos, nrm, camera, buffers.depth, eps=eps, theta_min=theta_min
    )
    interior = bilinear_sample(buffers.mask.astype(np.float32), x, y) >= 0.999
    vi = np.flatnonzero(visible & interior)
    colors = bilinear_sample(image, x[vi], y[vi]).astype(np.float32)
    return idx, vi, align, colors


def project_average(
    atlas: TextureAtlas,
    views: list[tuple[np.ndarray, object, Camera]],
    *,
    eps: float = VISIBILITY_EPS,
    theta_min: float = THETA_MIN,
) -> TextureAtlas:
    """First-pass blending: arithmetic mean over every qualifying view
    sample per texel; best_alignment keeps the max cosine."""
    res = atlas.resolution
    idx = atlas.occupied_indices()
    acc = np.zeros((len(idx), 3), dtype=np.float64)
    cnt = np.zeros(len(idx), dtype=np.float64)
    best = np.zeros(len(idx), dtype=np.float32)
    for image, buffers, camera in views:
        _, vi, align, colors = _texel_view_samples(
            atlas, image, buffers, camera, eps=eps, theta_min=theta_min
        )
        acc[vi] += colors
        cnt[vi] += 1.0
        np.maximum.at(best, vi, align[vi].astype(np.float32))

    flat_color = atlas.color.reshape(-1, 3)
    flat_weight = atlas.weight.reshape(-1)
    flat_align = atlas.best_alignment.reshape(-1)
    hit = cnt > 0
    tgt = idx[hit]
    prev_w = flat_weight[tgt].astype(np.float64)
    merged = (flat_color[tgt] * prev_w[:, None] + acc[hit]) / (prev_w + cnt[hit])[:, None]
    flat_color[tgt] = merged.astype(np.float32)
    flat_weight[tgt] = (prev_w + cnt[hit]).astype(np.float32)
    flat_align[tgt] = np.maximum(flat_align[tgt], best[hit])
    atlas.color = flat_color.reshape(res, res, 3)
    atlas.weight = flat_weight.reshape(res, res)
    atlas.best_alignment = flat_align.reshape(res, res)
    return atlas


def best_view_winners(
    atlas: TextureAtlas,
    views: list[tuple[np.ndarray, object, Camera]],
    *,
    eps: float = VISIBILITY_EPS,
    min_visible_frac: float = 0.5,
) -> np.ndarray:
    """Winner view per triangle: argmax of cos(face normal, direction to
    camera) over views seeing at least `min_visible_frac` of the triangle's
    texels; -1 where no view qualifies. Ties break to the lowest view index.
    """
    n_tri = atlas.tri_normal.shape[0]
    idx = atlas.occupied_indices()
    tex_tri = atlas.tri_id.reshape(-1)[idx]
    pos = atlas.world_pos.reshape(-1, 3)[idx].astype(np.float64)
    nrm = atlas.normal.reshape(-1, 3)[idx].astype(np.float64)
    texels_per_tri = np.bincount(tex_tri, minlength=n_tri)

    best_cos = np.full(n_tri, -np.inf)
    winner = np.full(n_tri, -1, dtype=np.int64)
    for vi, (_, buffers, camera) in enumerate(views):
        visible, _, _, _ = texel_visibility(
            pos, nrm, camera, buffers.depth, eps=eps, theta_min=0.0
        )
        vis_per_tri = np.bincount(tex_tri[visible], minlength=n_tri)
        frac_ok = (texels_per_tri > 0) & (vis_per_tri >= min_visible_frac * texels_per_tri)
        to_cam = camera.position[None, :] - atlas.tri_centroid
        to_cam /= np.maximum(np.linalg.norm(to_cam, axis=1, keepdims=True), 1e-20)
        cos = np.einsum("ij,ij->i", atlas.tri_normal, to_cam)
        better = frac_ok & (cos > best_cos)
        winner[better] = vi
        best_cos[better] = cos[better]
    return winner


def project_best_view(
    atlas: TextureAtlas,
    views: list[tuple[np.ndarray, object, Camera]],
    *,
    eps: float = VISIBILITY_EPS,
    min_visible_frac: float = 0.5,
) -> TextureAtlas:
    """Second-pass blending: every texel of a triangle samples the view whose
    direction best aligns with the triangle normal; triangles with no
    qualifying view keep their color."""
    winner = best_view_winners(atlas, views, eps=eps, min_visible_frac=min_visible_frac)
    res = atlas.resolution
    idx = atlas.occupied_indices()
    tex_tri = atlas.tri_id.reshape(-1)[idx]
    pos = atlas.world_pos.reshape(-1, 3)[idx].astype(np.float64)

    flat_color = atlas.color.reshape(-1, 3)
    flat_weight = atlas.weight.reshape(-1)
    flat_align = atlas.best_alignment.reshape(-1)
    for vi, (image, buffers, camera) in enumerate(views):
        sel = winner[tex_tri] == vi
        if not sel.any():
            continue
        x, y, _ = camera.project(pos[sel], buffers.resolution)
        # Keep the pass-1 average where the sample footprint leaves the mask.
        interior = bilinear_sample(buffers.mask.astype(np.float32), x, y) >= 0.999
        sel[np.flatnonzero(sel)[~interior]] = False
        if not sel.any():
            continue
        x, y = x[interior], y[interior]
        colors = bilinear_sample(image, x, y).astype(np.float32)
        tgt = idx[sel]
        flat_color[tgt] = colors
        flat_weight[tgt] = np.maximum(flat_weight[tgt], 1.0)
        to_cam = camera.position[None, :] - atlas.tri_centroid
        to_cam /= np.maximum(np.linalg.norm(to_cam, axis=1, keepdims=True), 1e-20)
        cos = np.einsum("ij,ij->i", atlas.tri_normal, to_cam)
        flat_align[tgt] = np.maximum(flat_align[tgt], cos[tex_tri[sel]].astype(np.float32))
    atlas.color = flat_color.reshape(res, res, 3)
    atlas.weight = flat_weight.reshape(res, res)
    atlas.best_alignment = flat_align.reshape(res, res)
    return atlas


def fill_from_view(
    atlas: TextureAtlas,
    image: np.ndarray,
    buffers,
    camera: Camera,
    *,
    eps: float = VISIBILITY_EPS,
    theta_min: float = THETA_MIN,
    delta: float = SCORE_DELTA,
) -> int:
    """Completion-pass projection: write colors into texels that are either
    uncovered or seen distinctly better (alignment gain > delta) in this
    view. Returns the number of texels newly covered."""
    res = atlas.resolution
    idx, vi, align, colors = _texel_view_samples(
        atlas, image, buffers, camera, eps=eps, theta_min=theta_min
    )
    flat_color = atlas.color.reshape(-1, 3)
    flat_weight = atlas.weight.reshape(-1)
    flat_align = atlas.best_alignment.reshape(-1)
    tgt = idx[vi]
    uncovered = flat_weight[tgt] == 0
    improved = align[vi].astype(np.float32) > flat_align[tgt] + delta
    write = uncovered | improved
    flat_color[tgt[write]] = colors[write]
    flat_weight[tgt[write]] = np.maximum(flat_weight[tgt[write]], 1.0)
    flat_align[tgt[write]] = np.maximum(
        flat_align[tgt[write]], align[vi][write].astype(np.float32)
    )
    atlas.color = flat_color.reshape(res, res, 3)
    atlas.weight = flat_weight.reshape(res, res)
    atlas.best_alignment = flat_align.reshape(res, res)
    return int(np.count_nonzero(uncovered))


def coverage_mask(atlas: TextureAtlas) -> np.ndarray:
    """White where occupied and never textured."""
    return atlas.occupied & (atlas.weight == 0)


def unseen_region_in_view(
    atlas: TextureAtlas, camera: Camera, buffers, *, delta: float = SCORE_DELTA
) -> np.ndarray:
    """View-space mask of pixels to regenerate: their texel is uncovered, or
    this view is aligned more than delta better than whatever textured it."""
    res = buffers.resolution
    out = np.zeros((res, res), dtype=bool)
    if not buffers.mask.any():
        return out
    ys, xs = np.nonzero(buffers.mask)
    tid = buffers.tri_id[ys, xs]
    bary = buffers.bary[ys, xs]
    uv = np.einsum("nk,nkj->nj", bary, atlas.corner_uvs[tid])
    tx, ty = atlas.uv_to_xy(uv)
    txi = np.clip(np.rint(tx).astype(np.int64), 0, atlas.resolution - 1)
    tyi = np.clip(np.rint(ty).astype(np.int64), 0, atlas.resolution - 1)
    to_cam = camera.position[None, :] - atlas.world_pos[tyi, txi]
    to_cam /= np.maximum(np.linalg.norm(to_cam, axis=1, keepdims=True), 1e-20)
    align = np.einsum("ij,ij->i", atlas.normal[tyi, txi], to_cam).astype(np.float32)
    unseen = atlas.weight[tyi, txi] == 0
    poorly = align > atlas.best_alignment[tyi, txi] + delta
    out[ys, xs] = atlas.occupied[tyi, txi] & (unseen | poorly)
    return out
