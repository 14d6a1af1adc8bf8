"""Software rasterizer and the conditioning images derived from it.

Produces every buffer the pipeline needs: z-buffered triangle ids with
perspective-correct barycentrics, camera-space depth, object mask, world
positions, a flat-shaded render for contour extraction, plus normalized
depth, ridge-filter lineart and textured re-renders.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .geometry import Mesh
from .imageops import bilinear_sample
from .views import Camera

log = logging.getLogger(__name__)

# Ridge detector defaults; the filter is parameter-free in name only, so both
# knobs stay configurable.
RIDGE_SIGMA = 1.0
RIDGE_TAU = 0.04

# Shading for the contour-source render: headlight Lambertian on constant albedo.
SHADE_AMBIENT = 0.15

# Mask dilation default is 8 px at a 400 px tile and scales with resolution.
DILATE_RADIUS_AT_400 = 8


@dataclass
class ViewBuffers:
    """Per-pixel rasterization outputs for one camera.

    depth is camera-space z (+inf background); bary is perspective-corrected
    so world-space attributes interpolate linearly; world_pos is NaN on
    background pixels.
    """

    camera: Camera
    depth: np.ndarray
    mask: np.ndarray
    tri_id: np.ndarray
    bary: np.ndarray
    world_pos: np.ndarray
    shaded: np.ndarray

    @property
    def resolution(self) -> int:
        return int(self.depth.shape[0])


@dataclass
class ConditioningImages:
    """8-bit conditioning triplet: normalized depth (near bright), binary
    lineart (lines white) and binary object mask (object white)."""

    depth_norm: np.ndarray
    lineart: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        shapes = {self.depth_norm.shape, self.lineart.shape, self.mask.shape}
        if len(shapes) != 1:
            raise ValueError(f"conditioning images disagree on resolution: {shapes}")


def rasterize(mesh: Mesh, camera: Camera, resolution: int) -> ViewBuffers:
    """Perspective z-buffered rasterization at pixel centers.

    Candidate pixels are generated per triangle bounding box in one flat
    batch; the nearest surface per pixel wins, ties broken by lowest
    triangle index.
    """
    if resolution < 64:
        raise ValueError("resolution must be at least 64")
    res = resolution
    depth_img = np.full((res, res), np.inf, dtype=np.float32)
    mask_img = np.zeros((res, res), dtype=bool)
    tid_img = np.full((res, res), -1, dtype=np.int32)
    bary_img = np.zeros((res, res, 3), dtype=np.float32)
    wpos_img = np.full((res, res, 3), np.nan, dtype=np.float32)
    shaded_img = np.ones((res, res), dtype=np.float32)
    out = ViewBuffers(camera, depth_img, mask_img, tid_img, bary_img, wpos_img, shaded_img)
    if mesh.num_triangles == 0:
        return out

    x, y, z = camera.project(mesh.vertices, res)
    pix = np.stack([x, y], axis=1)
    tv = pix[mesh.triangles]  # (T, 3, 2) screen coords
    tz = z[mesh.triangles]  # (T, 3) camera depths
    in_front = (tz > 1e-4).all(axis=1)
    tids = np.flatnonzero(in_front)
    if len(tids) == 0:
        return out
    tv = tv[tids]
    tz = tz[tids]

    lo = np.clip(np.floor(tv.min(axis=1)).astype(np.int64), 0, res)
    hi = np.clip(np.ceil(tv.max(axis=1)).astype(np.int64) + 1, 0, res)
    w = np.maximum(hi[:, 0] - lo[:, 0], 0)
    h = np.maximum(hi[:, 1] - lo[:, 1], 0)
    area = w * h
    keep = area > 0
    tv, tz, tids, lo, w, area = tv[keep], tz[keep], tids[keep], lo[keep], w[keep], area[keep]
    if len(tids) == 0:
        return out

    total = int(area.sum())
    rep = np.repeat(np.arange(len(tids)), area)
    starts = np.concatenate([[0], np.cumsum(area)[:-1]])
    offset = np.arange(total) - np.repeat(starts, area)
    wr = np.repeat(w, area)
    px = np.repeat(lo[:, 0], area) + offset % wr
    py = np.repeat(lo[:, 1], area) + offset // wr
    cx = px + 0.0  # pixel centers are integer coordinates in project()'s frame
    cy = py + 0.0

    a, b, c = tv[rep, 0], tv[rep, 1], tv[rep, 2]

    def edge(p, q, sx, sy):
        return (q[:, 0] - p[:, 0]) * (sy - p[:, 1]) - (q[:, 1] - p[:, 1]) * (sx - p[:, 0])

    w0 = edge(b, c, cx, cy)
    w1 = edge(c, a, cx, cy)
    w2 = edge(a, b, cx, cy)
    den = edge(b, c, a[:, 0], a[:, 1])
    inside = (np.abs(den) > 1e-12) & (
        ((w0 >= 0) & (w1 >= 0) & (w2 >= 0) & (den > 0))
        | ((w0 <= 0) & (w1 <= 0) & (w2 <= 0) & (den < 0))
    )
    if not inside.any():
        return out
    w0, w1, w2, den = w0[inside], w1[inside], w2[inside], den[inside]
    px, py, rep = px[inside], py[inside], rep[inside]

    b0, b1, b2 = w0 / den, w1 / den, w2 / den
    zt = tz[rep]
    inv_z = b0 / zt[:, 0] + b1 / zt[:, 1] + b2 / zt[:, 2]
    depth = 1.0 / inv_z

    flat = py * res + px
    order = np.lexsort((tids[rep], depth, flat))
    flat_sorted = flat[order]
    first = np.ones(len(flat_sorted), dtype=bool)
    first[1:] = flat_sorted[1:] != flat_sorted[:-1]
    win = order[first]

    fy, fx = flat[win] // res, flat[win] % res
    tri_win = tids[rep[win]]
    # perspective-correct barycentrics interpolate world-space attributes
    pb0 = (b0[win] / zt[win][:, 0]) * depth[win]
    pb1 = (b1[win] / zt[win][:, 1]) * depth[win]
    pb2 = (b2[win] / zt[win][:, 2]) * depth[win]

    depth_img[fy, fx] = depth[win]
    mask_img[fy, fx] = True
    tid_img[fy, fx] = tri_win.astype(np.int32)
    bary_img[fy, fx, 0] = pb0
    bary_img[fy, fx, 1] = pb1
    bary_img[fy, fx, 2] = pb2

    verts = mesh.vertices[mesh.triangles[tri_win]]
    wp = (
        verts[:, 0] * pb0[:, None]
        + verts[:, 1] * pb1[:, None]
        + verts[:, 2] * pb2[:, None]
    )
    wpos_img[fy, fx] = wp.astype(np.float32)

    face_n = mesh.face_normals()[tri_win]
    to_cam = camera.position[None, :] - wp
    to_cam /= np.maximum(np.linalg.norm(to_cam, axis=1, keepdims=True), 1e-20)
    lambert = np.abs(np.einsum("ij,ij->i", face_n, to_cam))
    shaded_img[fy, fx] = (SHADE_AMBIENT + (1.0 - SHADE_AMBIENT) * lambert).astype(np.float32)
    return out


def grid_depth_range(buffer_list: list[ViewBuffers]) -> tuple[float, float]:
    """Foreground depth range over the union of several views' pixels."""
    mins, maxs = [], []
    for buf in buffer_list:
        if buf.mask.any():
            fg = buf.depth[buf.mask]
            mins.append(float(fg.min()))
            maxs.append(float(fg.max()))
    if not mins:
        raise ValueError("no foreground pixels in any view")
    return min(mins), max(maxs)


def normalize_depth(buffers: ViewBuffers, depth_range: tuple[float, float] | None = None) -> np.ndarray:
    """Map foreground depth affinely so nearest -> 1.0 and farthest -> 0.0.

    A degenerate (constant) range maps to 1.0. Background is 0.0. Pass the
    grid-wide range when normalizing a grid of views together.
    """
    if not buffers.mask.any():
        raise ValueError("no foreground pixels to normalize")
    if depth_range is None:
        fg = buffers.depth[buffers.mask]
        dmin, dmax = float(fg.min()), float(fg.max())
    else:
        dmin, dmax = depth_range
    out = np.zeros_like(buffers.depth, dtype=np.float32)
    if dmax - dmin < 1e-12:
        out[buffers.mask] = 1.0
    else:
        out[buffers.mask] = (dmax - buffers.depth[buffers.mask]) / (dmax - dmin)
    return np.clip(out, 0.0, 1.0)


def _disk(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r : r + 1, -r : r + 1]
    return (xx * xx + yy * yy) <= r * r


def dilate_mask(mask: np.ndarray, radius: int) -> np.ndarray:
    """Morphological dilation with a disk structuring element; radius 0 is
    the identity."""
    if radius <= 0:
        return mask.copy()
    return ndimage.binary_dilation(mask.astype(bool), structure=_disk(radius))


def dilate_radius_for(resolution: int) -> int:
    return max(1, round(DILATE_RADIUS_AT_400 * resolution / 400))


def ridge_response(gray: np.ndarray, sigma: float = RIDGE_SIGMA) -> np.ndarray:
    """Negated minimum eigenvalue of the image Hessian (clamped at zero).

    Gaussian pre-smooth, Sobel-based second derivatives; constant offsets in
    the input leave the response unchanged.
    """
    g = ndimage.gaussian_filter(gray.astype(np.float64), sigma, mode="nearest")

    def d(img, axis):
        return ndimage.sobel(img, axis=axis, mode="nearest") / 8.0

    hxx = d(d(g, 1), 1)
    hyy = d(d(g, 0), 0)
    hxy = d(d(g, 0), 1)
    tr = hxx + hyy
    det_part = np.sqrt((hxx - hyy) ** 2 + 4.0 * hxy**2)
    lam_min = 0.5 * (tr - det_part)
    return np.maximum(0.0, -lam_min)


def lineart_from_buffers(
    buffers: ViewBuffers, *, sigma: float = RIDGE_SIGMA, tau: float = RIDGE_TAU
) -> np.ndarray:
    """Binary contour image: interior ridges of the shaded render unioned
    with the silhouette (mask boundary). Lines white on black."""
    response = ridge_response(buffers.shaded, sigma)
    interior = ndimage.binary_erosion(buffers.mask, iterations=2, border_value=0)
    lines = (response > tau) & interior
    silhouette = buffers.mask & ~ndimage.binary_erosion(buffers.mask, border_value=0)
    return (lines | silhouette).astype(np.float32)


def render_lineart(mesh: Mesh, camera: Camera, resolution: int, **kw) -> np.ndarray:
    return lineart_from_buffers(rasterize(mesh, camera, resolution), **kw)


def make_conditioning(
    buffers: ViewBuffers,
    *,
    depth_range: tuple[float, float] | None = None,
    dilate_radius: int | None = None,
) -> ConditioningImages:
    """Bundle the three conditioning images for one view (8-bit)."""
    from .imageops import to_u8

    radius = dilate_radius if dilate_radius is not None else dilate_radius_for(buffers.resolution)
    dilated = dilate_mask(buffers.mask, radius)
    return ConditioningImages(
        depth_norm=to_u8(normalize_depth(buffers, depth_range)),
        lineart=to_u8(lineart_from_buffers(buffers)),
        mask=to_u8(dilated.astype(np.float32)),
    )


def render_textured(
    mesh: Mesh,
    atlas,
    camera: Camera,
    resolution: int,
    *,
    buffers: ViewBuffers | None = None,
) -> np.ndarray:
    """Unlit albedo render of the current atlas: bilinear texture sampling,
    uncovered texels mid-gray, white background."""
    if buffers is None:
        buffers = rasterize(mesh, camera, resolution)
    out = np.ones((resolution, resolution, 3), dtype=np.float32)
    if not buffers.mask.any():
        return out
    ys, xs = np.nonzero(buffers.mask)
    tid = buffers.tri_id[ys, xs]
    bary = buffers.bary[ys, xs]
    uvs = mesh.corner_uvs()[tid]  # (N, 3, 2)
    uv = np.einsum("nk,nkj->nj", bary, uvs)
    tex = atlas.display_color()
    tx, ty = atlas.uv_to_xy(uv)
    out[ys, xs] = bilinear_sample(tex, tx, ty)
    return out
