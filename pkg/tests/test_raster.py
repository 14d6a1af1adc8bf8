from __future__ import annotations

import numpy as np
import pytest

from meshtex import procedural
from meshtex.geometry import normalize_to_unit_sphere
from meshtex.raster import (
    dilate_mask,
    dilate_radius_for,
    grid_depth_range,
    lineart_from_buffers,
    make_conditioning,
    normalize_depth,
    rasterize,
    render_textured,
)
from meshtex.views import Camera

from conftest import make_scatter_mesh


def _raycast_tri_ids(mesh, camera, res):
    """Brute-force reference: nearest Moller-Trumbore hit per pixel center,
    ties to the lowest triangle index."""
    px, py = np.meshgrid(np.arange(res), np.arange(res), indexing="xy")
    xn = 2.0 * (px.ravel() + 0.5) / res - 1.0
    yn = 1.0 - 2.0 * (py.ravel() + 0.5) / res
    focal = 1.0 / np.tan(np.radians(camera.vertical_fov) / 2.0)
    cam_dirs = np.stack([xn / focal, yn / focal, np.ones_like(xn)], axis=1)
    dirs = cam_dirs @ camera.basis()  # rows of basis are world axes of camera space

    v0 = mesh.vertices[mesh.triangles[:, 0]]
    e1 = mesh.vertices[mesh.triangles[:, 1]] - v0
    e2 = mesh.vertices[mesh.triangles[:, 2]] - v0

    best_t = np.full(len(dirs), np.inf)
    best_id = np.full(len(dirs), -1, dtype=np.int64)
    for t_id in range(len(v0)):
        pvec = np.cross(dirs, e2[t_id])
        det = pvec @ e1[t_id]
        ok = np.abs(det) > 1e-12
        inv = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
        tvec = camera.position - v0[t_id]
        u = (pvec @ tvec) * inv
        qvec = np.cross(tvec, e1[t_id])
        v = (dirs @ qvec) * inv
        t = (qvec @ e2[t_id]) * inv
        hit = ok & (u >= 0) & (v >= 0) & (u + v <= 1) & (t > 1e-4)
        closer = hit & (t < best_t - 1e-12)
        best_t[closer] = t[closer]
        best_id[closer] = t_id
    return best_id.reshape(res, res)


def test_tri_id_matches_raycast_over_random_scenes():
    res = 64
    agreements = []
    for scene in range(20):
        rng = np.random.default_rng(scene)
        mesh = make_scatter_mesh(rng, n_tris=50)
        direction = rng.normal(size=3)
        direction /= np.linalg.norm(direction)
        cam = Camera(position=direction * 3.2, image_size=res)
        buffers = rasterize(mesh, cam, res)
        reference = _raycast_tri_ids(mesh, cam, res)
        agree = (buffers.tri_id == reference).mean()
        agreements.append(agree)
    assert min(agreements) >= 0.999


def test_plate_depth_and_world_positions():
    mesh = procedural.flat_plate()
    cam = Camera(position=np.array([0.0, 0.0, 2.0]), image_size=64)
    buffers = rasterize(mesh, cam, 64)
    assert buffers.mask.any()
    np.testing.assert_allclose(buffers.depth[buffers.mask], 2.0, atol=1e-5)
    wp = buffers.world_pos[buffers.mask]
    np.testing.assert_allclose(wp[:, 2], 0.0, atol=1e-5)
    assert np.isnan(buffers.world_pos[~buffers.mask]).all()


def test_barycentrics_interpolate_world_pos(small_sphere):
    cam = Camera(position=np.array([0.0, 0.0, 3.2]), image_size=64)
    buffers = rasterize(small_sphere, cam, 64)
    ys, xs = np.nonzero(buffers.mask)
    tid = buffers.tri_id[ys, xs]
    bary = buffers.bary[ys, xs]
    np.testing.assert_allclose(bary.sum(axis=1), 1.0, atol=1e-4)
    verts = small_sphere.vertices[small_sphere.triangles[tid]]
    recon = np.einsum("nk,nkj->nj", bary, verts)
    np.testing.assert_allclose(recon, buffers.world_pos[ys, xs], atol=1e-4)


def test_occlusion_front_wins():
    near = procedural.flat_plate(size=0.4, name="near")
    far = procedural.flat_plate(size=1.0, name="far")
    far.vertices = far.vertices - np.array([0.0, 0.0, 0.5])
    mesh = procedural.merge_parts([(far, "far"), (near, "near")])
    cam = Camera(position=np.array([0.0, 0.0, 2.0]), image_size=64)
    buffers = rasterize(mesh, cam, 64)
    center_tid = buffers.tri_id[32, 32]
    assert center_tid in mesh.triangles_of("near")


def test_depth_normalization_near_is_bright(small_sphere):
    cam = Camera(position=np.array([0.0, 0.0, 3.2]), image_size=64)
    buffers = rasterize(small_sphere, cam, 64)
    norm = normalize_depth(buffers)
    fg = buffers.mask
    assert norm[fg].max() == pytest.approx(1.0)
    assert norm[fg].min() == pytest.approx(0.0)
    nearest = np.unravel_index(np.argmin(np.where(fg, buffers.depth, np.inf)), fg.shape)
    assert norm[nearest] == pytest.approx(1.0)
    assert (norm[~fg] == 0.0).all()


def test_grid_depth_range_unions_views(small_sphere):
    cams = [
        Camera(position=np.array([0.0, 0.0, 3.2]), image_size=64),
        Camera(position=np.array([0.0, 0.0, 5.0]), image_size=64),
    ]
    bufs = [rasterize(small_sphere, c, 64) for c in cams]
    lo, hi = grid_depth_range(bufs)
    assert lo == pytest.approx(float(bufs[0].depth[bufs[0].mask].min()))
    assert hi == pytest.approx(float(bufs[1].depth[bufs[1].mask].max()))
    looking_away = Camera(position=np.array([0.0, 0.0, -3.0]), target=np.array([0.0, 0.0, -6.0]))
    with pytest.raises(ValueError):
        grid_depth_range([rasterize(small_sphere, looking_away, 64)])


def test_dilate_radius_scales_with_resolution():
    assert dilate_radius_for(400) == 8
    assert dilate_radius_for(200) == 4
    assert dilate_radius_for(100) == 2
    assert dilate_radius_for(13) == 1


def test_dilate_mask_grows_by_radius():
    mask = np.zeros((32, 32), dtype=bool)
    mask[16, 16] = True
    grown = dilate_mask(mask, 3)
    ys, xs = np.nonzero(grown)
    assert np.hypot(ys - 16, xs - 16).max() <= 3.0 + 1e-9
    assert grown.sum() > 20


def test_conditioning_images_are_u8_and_consistent(small_sphere):
    cam = Camera(position=np.array([0.0, 0.0, 3.2]), image_size=64)
    buffers = rasterize(small_sphere, cam, 64)
    cond = make_conditioning(buffers, dilate_radius=2)
    for img in (cond.depth_norm, cond.lineart, cond.mask):
        assert img.dtype == np.uint8
        assert img.shape == (64, 64)
    assert set(np.unique(cond.lineart)) <= {0, 255}
    assert set(np.unique(cond.mask)) <= {0, 255}
    # mask is a dilated superset of the silhouette
    assert (cond.mask[buffers.mask] == 255).all()
    assert (cond.mask == 255).sum() > buffers.mask.sum()


def test_lineart_contains_silhouette(small_sphere):
    cam = Camera(position=np.array([0.0, 0.0, 3.2]), image_size=64)
    buffers = rasterize(small_sphere, cam, 64)
    lineart = lineart_from_buffers(buffers)
    inside = buffers.mask & ~np.roll(buffers.mask, 1, axis=0)
    assert lineart[inside].mean() > 0.5
    assert lineart.dtype == np.bool_ or set(np.unique(lineart)) <= {0, 1, True, False}


def test_render_textured_reproduces_constant_color(small_sphere):
    from meshtex.atlas import bake_texel_geometry

    atlas = bake_texel_geometry(small_sphere, 64)
    atlas.color[:] = np.array([0.2, 0.5, 0.8], dtype=np.float32)
    atlas.weight[atlas.occupied] = 1.0
    cam = Camera(position=np.array([0.0, 0.0, 3.2]), image_size=64)
    img = render_textured(small_sphere, atlas, cam, 64)
    buffers = rasterize(small_sphere, cam, 64)
    fg = img[buffers.mask]
    np.testing.assert_allclose(fg, np.broadcast_to([0.2, 0.5, 0.8], fg.shape), atol=1e-3)
    np.testing.assert_allclose(img[~buffers.mask], 1.0)  # white background


def test_rasterize_rejects_tiny_resolution(small_sphere):
    with pytest.raises(ValueError):
        rasterize(small_sphere, Camera(position=np.array([0.0, 0.0, 3.2])), 32)
