"""PatchMatch hole filling in UV space.

Fills texels no view could cover by matching patches against the already
textured region. Multiscale: the image pyramid bottoms out where the hole
shrinks to about a pixel, each level runs a few propagation/random-search
iterations over the nearest-neighbor field, then hole pixels are synthesized
by a similarity-weighted vote of the patches overlapping them.

Source patches are only ever taken fully inside the known occupied region,
so fills never sample across chart boundaries or out of previously-holed
texels. All randomness is driven by an explicit seed.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit
from scipy import ndimage

DEFAULT_PATCH = 7
DEFAULT_ITERS = 5
SEARCH_DECAY = 0.5
VOTE_SIGMA2 = 0.02  # mean-squared-error scale for vote weights


class InpaintError(Exception):
    pass


@njit(cache=True)
def _pdist(img, occ, ty, tx, sy, sx, r):
    """Mean squared RGB distance between the patch at (ty,tx) and the fully
    valid source patch at (sy,sx); target pixels outside the image or the
    occupied set are skipped."""
    h, w = img.shape[:2]
    total = 0.0
    cnt = 0
    for dy in range(-r, r + 1):
        yy = ty + dy
        if yy < 0 or yy >= h:
            continue
        zy = sy + dy
        for dx in range(-r, r + 1):
            xx = tx + dx
            if xx < 0 or xx >= w:
                continue
            if not occ[yy, xx]:
                continue
            zx = sx + dx
            d0 = img[yy, xx, 0] - img[zy, zx, 0]
            d1 = img[yy, xx, 1] - img[zy, zx, 1]
            d2 = img[yy, xx, 2] - img[zy, zx, 2]
            total += d0 * d0 + d1 * d1 + d2 * d2
            cnt += 1
    if cnt == 0:
        return 1e30
    return total / cnt


@njit(cache=True)
def _recompute(img, occ, hy, hx, nnf_y, nnf_x, nnf_d, r):
    for i in range(len(hy)):
        nnf_d[i] = _pdist(img, occ, hy[i], hx[i], nnf_y[i], nnf_x[i], r)


@njit(cache=True)
def _pm_iter(img, occ, src_ok, hidx, hy, hx, nnf_y, nnf_x, nnf_d, r, forward, rand, decay):
    """One alternating-scan pass: propagate from already-visited neighbors,
    then random-search around the current best with exponentially shrinking
    radius. Candidates are accepted only when strictly better, so the total
    field distance never increases."""
    n = len(hy)
    h, w = img.shape[:2]
    nk = rand.shape[1]
    for ii in range(n):
        i = ii if forward else n - 1 - ii
        y = hy[i]
        x = hx[i]
        by = nnf_y[i]
        bx = nnf_x[i]
        bd = nnf_d[i]
        for k in range(2):
            if forward:
                ny = y if k == 0 else y - 1
                nx = x - 1 if k == 0 else x
            else:
                ny = y if k == 0 else y + 1
                nx = x + 1 if k == 0 else x
            if ny < 0 or ny >= h or nx < 0 or nx >= w:
                continue
            j = hidx[ny, nx]
            if j < 0:
                continue
            cy = nnf_y[j] + (y - ny)
            cx = nnf_x[j] + (x - nx)
            if cy < 0 or cy >= h or cx < 0 or cx >= w or not src_ok[cy, cx]:
                continue
            d = _pdist(img, occ, y, x, cy, cx, r)
            if d < bd:
                bd = d
                by = cy
                bx = cx
        rad = float(max(h, w))
        k = 0
        while rad >= 1.0 and k < nk:
            cy = by + int(round((rand[i, k, 0] * 2.0 - 1.0) * rad))
            cx = bx + int(round((rand[i, k, 1] * 2.0 - 1.0) * rad))
            if 0 <= cy < h and 0 <= cx < w and src_ok[cy, cx]:
                d = _pdist(img, occ, y, x, cy, cx, r)
                if d < bd:
                    bd = d
                    by = cy
                    bx = cx
            rad *= decay
            k += 1
        nnf_y[i] = by
        nnf_x[i] = bx
        nnf_d[i] = bd


@njit(cache=True)
def _vote(img, hidx, hy, hx, nnf_y, nnf_x, nnf_d, r, sigma2):
    """Replace each hole pixel by the similarity-weighted average of the
    source pixels proposed by every hole-centered patch overlapping it."""
    n = len(hy)
    h, w = img.shape[:2]
    out = np.empty((n, 3), dtype=np.float32)
    for i in range(n):
        y = hy[i]
        x = hx[i]
        a0 = 0.0
        a1 = 0.0
        a2 = 0.0
        wsum = 0.0
        for dy in range(-r, r + 1):
            ry = y + dy
            if ry < 0 or ry >= h:
                continue
            for dx in range(-r, r + 1):
                rx = x + dx
                if rx < 0 or rx >= w:
                    continue
                j = hidx[ry, rx]
                if j < 0:
                    continue
                sy = nnf_y[j] - dy
                sx = nnf_x[j] - dx
                if sy < 0 or sy >= h or sx < 0 or sx >= w:
                    continue
                wt = math.exp(-nnf_d[j] / sigma2)
                a0 += wt * img[sy, sx, 0]
                a1 += wt * img[sy, sx, 1]
                a2 += wt * img[sy, sx, 2]
                wsum += wt
        if wsum > 0.0:
            out[i, 0] = a0 / wsum
            out[i, 1] = a1 / wsum
            out[i, 2] = a2 / wsum
        else:
            out[i, 0] = img[y, x, 0]
            out[i, 1] = img[y, x, 1]
            out[i, 2] = img[y, x, 2]
    for i in range(n):
        img[hy[i], hx[i], 0] = out[i, 0]
        img[hy[i], hx[i], 1] = out[i, 1]
        img[hy[i], hx[i], 2] = out[i, 2]


def _pool_any(mask: np.ndarray) -> np.ndarray:
    h, w = mask.shape
    m = np.pad(mask, ((0, h % 2), (0, w % 2)), constant_values=False)
    return m[0::2, 0::2] | m[1::2, 0::2] | m[0::2, 1::2] | m[1::2, 1::2]


def _pool_image(img: np.ndarray, weight: np.ndarray) -> np.ndarray:
    """2x2 average weighted by validity; all-invalid blocks get mid-gray."""
    h, w = img.shape[:2]
    im = np.pad(img, ((0, h % 2), (0, w % 2), (0, 0)), mode="edge")
    wt = np.pad(weight.astype(np.float32), ((0, h % 2), (0, w % 2)), constant_values=0.0)
    num = (
        im[0::2, 0::2] * wt[0::2, 0::2, None]
        + im[1::2, 0::2] * wt[1::2, 0::2, None]
        + im[0::2, 1::2] * wt[0::2, 1::2, None]
        + im[1::2, 1::2] * wt[1::2, 1::2, None]
    )
    den = wt[0::2, 0::2] + wt[1::2, 0::2] + wt[0::2, 1::2] + wt[1::2, 1::2]
    out = np.full_like(num, 0.5)
    nz = den > 0
    out[nz] = num[nz] / den[nz, None]
    return out.astype(np.float32)


def _source_centers(valid: np.ndarray, patch: int) -> np.ndarray:
    """Patch centers whose full window lies inside the valid set."""
    counts = ndimage.uniform_filter(
        valid.astype(np.float64), size=patch, mode="constant", cval=0.0
    )
    ok = counts > 1.0 - 0.5 / (patch * patch)
    r = patch // 2
    ok[:r, :] = False
    ok[-r:, :] = False
    ok[:, :r] = False
    ok[:, -r:] = False
    return ok


def _nearest_center_init(src_ok: np.ndarray):
    """For every pixel, coordinates of the nearest fully-valid patch center."""
    _, (iy, ix) = ndimage.distance_transform_edt(~src_ok, return_indices=True)
    return iy.astype(np.int32), ix.astype(np.int32)


def patchmatch_inpaint(
    texture: np.ndarray,
    hole: np.ndarray,
    occupied: np.ndarray | None = None,
    patch: int = DEFAULT_PATCH,
    iters: int = DEFAULT_ITERS,
    *,
    seed: int = 0,
    return_trace: bool = False,
):
    """Fill `hole` pixels of `texture` from the rest of the occupied region.

    Returns the filled image (float32, non-hole pixels bit-identical to the
    input). With return_trace=True also returns the per-level list of
    per-iteration mean patch distances, which is non-increasing by
    construction at each level.
    """
    if patch % 2 == 0 or patch < 3:
        raise ValueError("patch size must be odd and >= 3")
    img = np.asarray(texture, dtype=np.float32)
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    img = img.copy()
    hole = np.asarray(hole, dtype=bool)
    if occupied is None:
        occupied = np.ones(hole.shape, dtype=bool)
    occupied = np.asarray(occupied, dtype=bool)
    hole = hole & occupied
    out = img.copy()
    if not hole.any():
        return (out, []) if return_trace else out
    if not (occupied & ~hole).any():
        raise InpaintError("hole covers every occupied texel; nothing to sample")

    # pyramid, finest first; stop once the hole would vanish or the image
    # gets too small to host a full patch
    levels = [(img, occupied, hole)]
    while True:
        im, oc, ho = levels[-1]
        if min(ho.shape) // 2 < patch + 2:
            break
        ho2 = _pool_any(ho)
        if not ho2.any():
            break
        oc2 = _pool_any(oc)
        im2 = _pool_image(im, oc & ~ho)
        levels.append((im2, oc2, ho2))

    trace: list[list[float]] = []
    prev = None  # (hidx, nnf_y, nnf_x) of the coarser level
    for li in range(len(levels) - 1, -1, -1):
        im, oc, ho = levels[li]
        h, w = ho.shape
        valid = oc & ~ho
        src_ok = _source_centers(valid, patch)
        if not src_ok.any():
            if li == 0:
                raise InpaintError("occupied region smaller than one patch")
            prev = None
            continue

        ys, xs = np.nonzero(ho)
        hy = ys.astype(np.int32)
        hx = xs.astype(np.int32)
        hidx = np.full((h, w), -1, dtype=np.int32)
        hidx[hy, hx] = np.arange(len(hy), dtype=np.int32)

        near_y, near_x = _nearest_center_init(src_ok)
        nnf_y = near_y[hy, hx].copy()
        nnf_x = near_x[hy, hx].copy()
        if prev is not None:
            phidx, pny, pnx = prev
            pj = phidx[hy // 2, hx // 2]
            has = pj >= 0
            cy = np.clip(pny[pj[has]] * 2 + hy[has] % 2, 0, h - 1)
            cx = np.clip(pnx[pj[has]] * 2 + hx[has] % 2, 0, w - 1)
            good = src_ok[cy, cx]
            rows = np.flatnonzero(has)[good]
            nnf_y[rows] = cy[good]
            nnf_x[rows] = cx[good]
            # carry coarse colors into this level's hole before matching
            up = np.repeat(np.repeat(levels[li + 1][0], 2, axis=0), 2, axis=1)[:h, :w]
            im[hy, hx] = up[hy, hx]

        r = patch // 2
        nnf_d = np.empty(len(hy), dtype=np.float64)
        _recompute(im, oc, hy, hx, nnf_y, nnf_x, nnf_d, r)
        n_search = max(1, int(math.ceil(math.log(max(h, w)) / math.log(1.0 / SEARCH_DECAY))))
        energies = []
        for it in range(iters):
            rng = np.random.default_rng([seed, li, it])
            rand = rng.random((len(hy), n_search, 2))
            _pm_iter(im, oc, src_ok, hidx, hy, hx, nnf_y, nnf_x, nnf_d, r, it % 2 == 0, rand, SEARCH_DECAY)
            energies.append(float(nnf_d.mean()))
        _vote(im, hidx, hy, hx, nnf_y, nnf_x, nnf_d, r, VOTE_SIGMA2)
        trace.append(energies)
        prev = (hidx, nnf_y, nnf_x)

    filled = levels[0][0]
    ys, xs = np.nonzero(hole)
    out[ys, xs] = filled[ys, xs]
    return (out, trace) if return_trace else out
