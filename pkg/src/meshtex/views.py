"""Cameras, view sampling for the grid passes, and greedy selection of
completion views driven by a texel-coverage contribution score.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

log = logging.getLogger(__name__)

# Ring layout for the 16 grid views: (elevation deg, azimuth count, phase deg).
GRID_RINGS = ((-20.0, 5, 0.0), (15.0, 6, 30.0), (45.0, 5, 0.0))

# Contribution-score constants; the threshold is relative to the occupied
# texel count and calibrated so typical meshes select 2-3 completion views.
# delta below ~0.2 makes candidates leapfrog around poorly-aligned regions
# in tiny alignment steps, inflating the count well past that band.
SCORE_LAMBDA = 0.5
SCORE_THETA_MIN = 0.2
SCORE_DELTA = 0.3
SCORE_THRESHOLD_REL = 0.005


@dataclass
class Camera:
    """Pinhole camera looking from `position` toward `target`."""

    position: np.ndarray
    target: np.ndarray = field(default_factory=lambda: np.zeros(3))
    up: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0, 0.0]))
    vertical_fov: float = 40.0
    image_size: int = 512

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        self.up = np.asarray(self.up, dtype=np.float64)
        if not 0.0 < self.vertical_fov < 180.0:
            raise ValueError(f"vertical_fov must be in (0, 180), got {self.vertical_fov}")
        if np.linalg.norm(self.position - self.target) < 1e-12:
            raise ValueError("camera position coincides with target")

    def forward(self) -> np.ndarray:
        f = self.target - self.position
        return f / np.linalg.norm(f)

    def basis(self) -> np.ndarray:
        """World-to-camera rotation, rows (right, up, forward). Camera space
        has +z along the viewing direction."""
        fwd = self.forward()
        up = self.up / np.linalg.norm(self.up)
        if abs(float(fwd @ up)) > 0.999:
            up = np.array([1.0, 0.0, 0.0])
            if abs(float(fwd @ up)) > 0.999:
                up = np.array([0.0, 0.0, 1.0])
        right = np.cross(fwd, up)
        right /= np.linalg.norm(right)
        true_up = np.cross(right, fwd)
        return np.stack([right, true_up, fwd])

    def world_to_camera(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points) - self.position) @ self.basis().T

    def project(self, points: np.ndarray, resolution: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Project world points to pixel coordinates.

        Returns (x, y, depth) where (x, y) are fractional pixel coordinates
        with (0, 0) at the top-left pixel center and depth is camera-space z.
        Points behind the camera get depth <= 0 and unusable coordinates.
        """
        pc = self.world_to_camera(points)
        z = pc[..., 2]
        safe = np.where(np.abs(z) > 1e-12, z, 1e-12)
        focal = 1.0 / np.tan(np.radians(self.vertical_fov) / 2.0)
        xn = pc[..., 0] / safe * focal
        yn = pc[..., 1] / safe * focal
        x = (xn * 0.5 + 0.5) * resolution - 0.5
        y = (0.5 - yn * 0.5) * resolution - 0.5
        return x, y, z


def sample_grid_views(radius: float, *, vertical_fov: float = 40.0, image_size: int = 400) -> list[Camera]:
    """The 16 cameras of the grid passes, ring by ring, all aimed at the origin."""
    cams = []
    for elev_deg, count, phase_deg in GRID_RINGS:
        elev = np.radians(elev_deg)
        for j in range(count):
            az = np.radians(phase_deg) + 2.0 * np.pi * j / count
            pos = radius * np.array(
                [np.cos(elev) * np.cos(az), np.sin(elev), np.cos(elev) * np.sin(az)]
            )
            cams.append(Camera(position=pos, vertical_fov=vertical_fov, image_size=image_size))
    return cams


def fibonacci_sphere(n: int) -> np.ndarray:
    """n unit directions on the Fibonacci lattice (golden-angle azimuths,
    uniform stratification along y)."""
    if n < 1:
        raise ValueError("need at least one point")
    i = np.arange(n)
    y = 1.0 - 2.0 * (i + 0.5) / n
    r = np.sqrt(np.maximum(0.0, 1.0 - y * y))
    theta = np.pi * (3.0 - np.sqrt(5.0)) * i
    return np.stack([r * np.cos(theta), y, r * np.sin(theta)], axis=1)


@dataclass
class CoverageState:
    """Per-texel coverage bookkeeping over the atlas' occupied texels.

    positions/normals give each occupied texel's surface point; alignment is
    the best view-alignment cosine seen so far (only meaningful where
    covered is True).
    """

    positions: np.ndarray
    normals: np.ndarray
    alignment: np.ndarray
    covered: np.ndarray

    @classmethod
    def from_atlas(cls, atlas) -> "CoverageState":
        idx = atlas.occupied_indices()
        flat_pos = atlas.world_pos.reshape(-1, 3)[idx]
        flat_n = atlas.normal.reshape(-1, 3)[idx]
        flat_w = atlas.weight.reshape(-1)[idx]
        flat_a = atlas.best_alignment.reshape(-1)[idx]
        return cls(
            positions=flat_pos.astype(np.float64),
            normals=flat_n.astype(np.float64),
            alignment=flat_a.astype(np.float64).copy(),
            covered=(flat_w > 0).copy(),
        )

    def copy(self) -> "CoverageState":
        return CoverageState(
            self.positions, self.normals, self.alignment.copy(), self.covered.copy()
        )

    @property
    def num_texels(self) -> int:
        return int(self.positions.shape[0])


def texel_visibility(
    positions: np.ndarray,
    normals: np.ndarray,
    camera: Camera,
    depth_buffer: np.ndarray,
    *,
    eps: float,
    theta_min: float,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Which surface points are visible in a view, and how well aligned.

    A point passes when it projects inside the frame, its camera depth agrees
    with the view's depth buffer (nearest-pixel lookup), and the cosine
    between its normal and the direction to the camera exceeds theta_min.

    The depth tolerance adapts to the buffer: on top of the base eps it
    allows for the depth variation across one pixel footprint, which grows
    with view distance and with surface slope (grazing texels would
    otherwise flicker out of visibility at any finite resolution).
    Returns (visible, align, x, y).
    """
    res = depth_buffer.shape[0]
    x, y, z = camera.project(positions, res)
    xi = np.rint(x).astype(np.int64)
    yi = np.rint(y).astype(np.int64)
    in_frame = (z > 1e-6) & (xi >= 0) & (xi < res) & (yi >= 0) & (yi < res)
    xi = np.clip(xi, 0, res - 1)
    yi = np.clip(yi, 0, res - 1)
    buf = depth_buffer[yi, xi]
    to_cam = camera.position - positions
    to_cam /= np.maximum(np.linalg.norm(to_cam, axis=1, keepdims=True), 1e-20)
    align = np.einsum("ij,ij->i", normals, to_cam)
    a = np.clip(align, 0.1, 1.0)
    footprint = 2.0 * z * np.tan(np.deg2rad(camera.vertical_fov) / 2.0) / res
    slope_tol = footprint * np.sqrt(np.maximum(0.0, 1.0 - a * a)) / a
    depth_ok = np.abs(buf - z) <= eps + 0.75 * slope_tol
    visible = in_frame & depth_ok & (align > theta_min)
    return visible, align, x, y


def candidate_gain(
    candidate: Camera,
    coverage: CoverageState,
    view_buffers,
    *,
    eps: float = 0.005,
    theta_min: float = SCORE_THETA_MIN,
) -> tuple[np.ndarray, np.ndarray]:
    """Indices and alignment cosines of the texels this candidate could
    texture (visible with alignment above the grazing cutoff)."""
    visible, align, _, _ = texel_visibility(
        coverage.positions,
        coverage.normals,
        candidate,
        view_buffers.depth,
        eps=eps,
        theta_min=theta_min,
    )
    idx = np.flatnonzero(visible)
    return idx, align[idx]


def score_from_gain(
    idx: np.ndarray,
    align: np.ndarray,
    coverage: CoverageState,
    *,
    lam: float = SCORE_LAMBDA,
    delta: float = SCORE_DELTA,
) -> float:
    """S = N_new + lam * N_improved over a candidate's qualifying texels."""
    covered = coverage.covered[idx]
    n_new = int(np.count_nonzero(~covered))
    improved = covered & (align > coverage.alignment[idx] + delta)
    return n_new + lam * int(np.count_nonzero(improved))


def contribution_score(
    candidate: Camera,
    coverage: CoverageState,
    view_buffers,
    *,
    eps: float = 0.005,
    theta_min: float = SCORE_THETA_MIN,
    lam: float = SCORE_LAMBDA,
    delta: float = SCORE_DELTA,
) -> float:
    idx, align = candidate_gain(candidate, coverage, view_buffers, eps=eps, theta_min=theta_min)
    return score_from_gain(idx, align, coverage, lam=lam, delta=delta)


def apply_gain(coverage: CoverageState, idx: np.ndarray, align: np.ndarray) -> None:
    """Update coverage as if the view textured its qualifying texels."""
    coverage.covered[idx] = True
    coverage.alignment[idx] = np.maximum(coverage.alignment[idx], align)


@dataclass
class SelectionStep:
    view_index: int
    score: float
    rival_scores: list[float]


@dataclass
class SelectionResult:
    cameras: list[Camera]
    indices: list[int]
    trace: list[SelectionStep]

    def trace_dict(self) -> list[dict]:
        return [
            {"view_index": s.view_index, "score": s.score, "rival_scores": s.rival_scores}
            for s in self.trace
        ]


def select_completion_views(
    candidates: Sequence[Camera],
    coverage: CoverageState,
    threshold: float,
    buffers_for: Callable[[Camera], object],
    *,
    eps: float = 0.005,
    theta_min: float = SCORE_THETA_MIN,
    lam: float = SCORE_LAMBDA,
    delta: float = SCORE_DELTA,
    max_views: int | None = None,
) -> SelectionResult:
    """Greedy next-best-view selection.

    Rasterizes every candidate once (via buffers_for) to cache its qualifying
    texel set, then repeatedly picks the highest-scoring candidate, updates a
    working copy of the coverage, and rescores the rest from the cache. Stops
    when the best score drops below `threshold` (or at max_views, a safety
    bound for degenerate inputs).
    """
    work = coverage.copy()
    gains = []
    for cam in candidates:
        gains.append(candidate_gain(cam, work, buffers_for(cam), eps=eps, theta_min=theta_min))

    remaining = list(range(len(candidates)))
    picked: list[int] = []
    trace: list[SelectionStep] = []
    rounds = len(candidates) if max_views is None else min(max_views, len(candidates))
    for _ in range(rounds):
        scores = [score_from_gain(*gains[i], work, lam=lam, delta=delta) for i in remaining]
        best_pos = int(np.argmax(scores))
        best_score = scores[best_pos]
        if best_score < threshold:
            break
        chosen = remaining.pop(best_pos)
        picked.append(chosen)
        trace.append(
            SelectionStep(
                view_index=chosen,
                score=float(best_score),
                rival_scores=[float(s) for i, s in enumerate(scores) if i != best_pos],
            )
        )
        apply_gain(work, *gains[chosen])
    log.info("completion pass selected %d views", len(picked))
    return SelectionResult(
        cameras=[candidates[i] for i in picked], indices=picked, trace=trace
    )
