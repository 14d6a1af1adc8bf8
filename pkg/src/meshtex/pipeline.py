"""End-to-end orchestration of texturing and material assignment.

run_texture drives the three passes: 16-view grid generation with average
blending, grid refinement with best-view blending, then greedy completion
views with inpaint requests and a final PatchMatch fill. run_assign retrieves
and applies one material per part. Both are deterministic given (mesh,
config, seed) when the mock backends are selected.
"""

from __future__ import annotations

import configparser
import json
import logging
import time
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import assign as assign_mod
from . import atlas as atlas_mod
from . import genproto, matindex, views
from .geometry import Mesh, normalize_to_unit_sphere
from .imageops import to_u8 as _u8
from .inpaint import patchmatch_inpaint
from .raster import dilate_radius_for, grid_depth_range, make_conditioning, rasterize, render_textured

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
ATLAS_NAME = "atlas.png"
COVERAGE_NAME = "coverage.png"


class PipelineError(Exception):
    pass


@dataclass
class PipelineConfig:
    prompt: str = ""
    negative_prompt: str = ""
    seed: int = 0
    grid_resolution: int = 1600
    tile_count: int = 16
    atlas_resolution: int = 1024
    pass1_steps: int = 50
    pass2_steps: int = 20
    inpaint_resolution: int = 512
    control_weights: tuple = (0.5, 0.5)
    fibonacci_n: int = 150
    completion_threshold_rel: float = views.SCORE_THRESHOLD_REL
    max_completion_views: int = 8
    retrieval_w: float = matindex.DEFAULT_W
    camera_radius: float = 3.2
    candidate_resolution: int = 160
    backend: str = genproto.MOCK_ENDPOINT
    embed_endpoint: str = matindex.MOCK_EMBED
    llm_endpoint: str | None = None
    object_name: str = "object"
    export_mode: str = "manifest"

    def validate(self) -> None:
        if self.tile_count != genproto.GRID_TILES:
            raise ValueError("tile_count is fixed at 16 (4x4 grid)")
        for name in ("grid_resolution", "atlas_resolution", "inpaint_resolution"):
            v = getattr(self, name)
            if v <= 0 or v % 4:
                raise ValueError(f"{name} must be a positive multiple of 4, got {v}")
        if self.pass2_steps > self.pass1_steps:
            raise ValueError("pass2_steps must be <= pass1_steps")
        if not 0.0 <= self.retrieval_w <= 1.0:
            raise ValueError("retrieval_w must be in [0, 1]")
        if self.fibonacci_n < 1:
            raise ValueError("fibonacci_n must be >= 1")

    @property
    def tile_resolution(self) -> int:
        return self.grid_resolution // genproto.GRID_SIDE

    def snapshot(self) -> dict:
        d = asdict(self)
        d["control_weights"] = list(self.control_weights)
        return d


_BOOL = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def load_config(path, overrides: dict | None = None) -> PipelineConfig:
    """Read an INI-style config file ([pipeline] section) and apply explicit
    overrides on top; unset values keep the dataclass defaults."""
    cfg = PipelineConfig()
    if path is not None:
        parser = configparser.ConfigParser()
        if not parser.read(str(path)):
            raise FileNotFoundError(f"config file not found: {path}")
        section = parser["pipeline"] if parser.has_section("pipeline") else parser["DEFAULT"]
        valid = {f.name: f for f in fields(PipelineConfig)}
        for key, raw in section.items():
            if key not in valid:
                raise ValueError(f"unknown config key {key!r}")
            cfg = _set_field(cfg, key, raw)
    for key, val in (overrides or {}).items():
        if val is not None:
            setattr(cfg, key, val)
    cfg.validate()
    return cfg


def _set_field(cfg: PipelineConfig, key: str, raw: str) -> PipelineConfig:
    current = getattr(cfg, key)
    if key == "control_weights":
        parts = [float(p) for p in raw.replace(",", " ").split()]
        if len(parts) != 2:
            raise ValueError("control_weights needs two values")
        setattr(cfg, key, tuple(parts))
    elif isinstance(current, bool):
        setattr(cfg, key, _BOOL[raw.strip().lower()])
    elif isinstance(current, int):
        setattr(cfg, key, int(raw))
    elif isinstance(current, float):
        setattr(cfg, key, float(raw))
    else:
        setattr(cfg, key, raw if raw.lower() != "none" else None)
    return cfg


def _assemble_conditioning(conds: list) -> "_GridCond":
    depth = genproto.assemble_grid([c.depth_norm for c in conds])
    lineart = genproto.assemble_grid([c.lineart for c in conds])
    mask = genproto.assemble_grid([c.mask for c in conds])
    return _GridCond(depth, lineart, mask)


@dataclass
class _GridCond:
    depth_norm: np.ndarray
    lineart: np.ndarray
    mask: np.ndarray


def run_texture(mesh: Mesh, config: PipelineConfig, run_dir=None) -> atlas_mod.TextureAtlas:
    """Texture the mesh; returns the completed atlas (every occupied texel
    covered). When run_dir is given, writes atlas.png, coverage.png and a
    deterministic manifest.json there."""
    config.validate()
    mesh = normalize_to_unit_sphere(mesh)
    tile = config.tile_resolution
    t0 = time.perf_counter()

    atlas = atlas_mod.bake_texel_geometry(mesh, config.atlas_resolution)
    occupied_count = len(atlas.occupied_indices())
    log.info("atlas bake: %d texels occupied (%.2fs)", occupied_count, time.perf_counter() - t0)

    # pass 1: one grid request, full denoise, average blending
    t1 = time.perf_counter()
    cams = views.sample_grid_views(config.camera_radius, image_size=tile)
    bufs = [rasterize(mesh, cam, tile) for cam in cams]
    depth_range = grid_depth_range(bufs)
    radius = dilate_radius_for(tile)
    conds = [make_conditioning(b, depth_range=depth_range, dilate_radius=radius) for b in bufs]
    grid_cond = _assemble_conditioning(conds)
    aux = genproto.assemble_grid([b.world_pos for b in bufs])
    try:
        req = genproto.build_request("full", grid_cond, config=config, aux_world_pos=aux)
        image = genproto.call_backend(req, config.backend)
    except genproto.BackendError as exc:
        raise PipelineError(f"pass 1 backend failure: {exc}") from exc
    tiles = genproto.split_grid(image)
    atlas_mod.project_average(atlas, list(zip(tiles, bufs, cams)))
    log.info(
        "pass 1: %d/%d texels covered (%.2fs)",
        occupied_count - atlas.num_uncovered(),
        occupied_count,
        time.perf_counter() - t1,
    )

    # pass 2: re-render, refine with partial denoise, best-view blending
    t2 = time.perf_counter()
    renders = [render_textured(mesh, atlas, cam, tile, buffers=b) for cam, b in zip(cams, bufs)]
    init_grid = genproto.assemble_grid(renders)
    try:
        req = genproto.build_request(
            "refine", grid_cond, init_image=_u8(init_grid), config=config, aux_world_pos=aux
        )
        image = genproto.call_backend(req, config.backend)
    except genproto.BackendError as exc:
        raise PipelineError(f"pass 2 backend failure: {exc}") from exc
    tiles = genproto.split_grid(image)
    atlas_mod.project_best_view(atlas, list(zip(tiles, bufs, cams)))
    log.info("pass 2 done (%.2fs)", time.perf_counter() - t2)

    # pass 3: greedy completion views, sequential inpaint requests
    t3 = time.perf_counter()
    coverage = views.CoverageState.from_atlas(atlas)
    threshold = config.completion_threshold_rel * occupied_count
    directions = views.fibonacci_sphere(config.fibonacci_n)
    candidates = [
        views.Camera(position=d * config.camera_radius, image_size=config.candidate_resolution)
        for d in directions
    ]

    def buffers_for(cam: views.Camera):
        return rasterize(mesh, cam, config.candidate_resolution)

    selection = views.select_completion_views(
        candidates,
        coverage,
        threshold,
        buffers_for,
        max_views=config.max_completion_views,
    )
    newly = 0
    for step in selection.trace:
        cam = views.Camera(
            position=candidates[step.view_index].position, image_size=config.inpaint_resolution
        )
        b = rasterize(mesh, cam, config.inpaint_resolution)
        cond = make_conditioning(b, dilate_radius=dilate_radius_for(config.inpaint_resolution))
        init = render_textured(mesh, atlas, cam, config.inpaint_resolution, buffers=b)
        region = atlas_mod.unseen_region_in_view(atlas, cam, b)
        try:
            req = genproto.build_request(
                "inpaint",
                cond,
                init_image=_u8(init),
                config=config,
                inpaint_region=_u8(region.astype(np.float32)),
                aux_world_pos=b.world_pos,
            )
            image = genproto.call_backend(req, config.backend)
        except genproto.BackendError as exc:
            raise PipelineError(f"pass 3 backend failure: {exc}") from exc
        newly += atlas_mod.fill_from_view(atlas, image, b, cam)
    log.info(
        "pass 3: %d views, %d texels filled (%.2fs)",
        len(selection.trace),
        newly,
        time.perf_counter() - t3,
    )

    # final hole fill
    t4 = time.perf_counter()
    holes = atlas_mod.coverage_mask(atlas)
    hole_count = int(holes.sum())
    if hole_count:
        atlas.color = patchmatch_inpaint(atlas.color, holes, atlas.occupied, seed=config.seed)
        atlas.weight[holes] = 1.0
    if atlas.num_uncovered():
        raise PipelineError(f"{atlas.num_uncovered()} occupied texels left uncovered")
    log.info("hole fill: %d texels (%.2fs)", hole_count, time.perf_counter() - t4)
    log.info("texture run total %.2fs", time.perf_counter() - t0)

    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        atlas.export_png(run_dir / ATLAS_NAME, run_dir / COVERAGE_NAME)
        manifest = {
            "version": 1,
            "config": config.snapshot(),
            "mesh": {
                "triangles": int(mesh.num_triangles),
                "parts": list(mesh.part_names),
                "occupied_texels": occupied_count,
            },
            "passes": {
                "grid_views": len(cams),
                "completion": selection.trace_dict(),
                "hole_fill_texels": hole_count,
            },
        }
        (run_dir / MANIFEST_NAME).write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return atlas


def run_assign(
    mesh: Mesh,
    atlas: atlas_mod.TextureAtlas,
    index: matindex.MaterialIndex,
    config: PipelineConfig,
    out_dir=None,
) -> list[assign_mod.PartAssignment]:
    """Retrieve and export one material per part using the textured atlas."""
    config.validate()
    if not index.records:
        raise PipelineError("material index is empty")
    mesh = normalize_to_unit_sphere(mesh)
    t0 = time.perf_counter()
    assignments, suggestion = assign_mod.assign_materials(
        mesh,
        index,
        atlas,
        object_name=config.object_name,
        llm_endpoint=config.llm_endpoint,
        embed_endpoint=config.embed_endpoint,
        w=config.retrieval_w,
    )
    assignments.sort(key=lambda a: a.part_id)
    log.info(
        "assigned %d parts (%s) in %.2fs",
        len(assignments),
        ", ".join(f"{a.part_name}->{a.material_id}/{a.preset_id}" for a in assignments),
        time.perf_counter() - t0,
    )
    if out_dir is not None:
        assign_mod.export_assignment(
            mesh, assignments, index, out_dir, config.export_mode, atlas_resolution=config.atlas_resolution
        )
    return assignments


def run_full(mesh: Mesh, config: PipelineConfig, index: matindex.MaterialIndex, out_dir) -> tuple:
    out_dir = Path(out_dir)
    atlas = run_texture(mesh, config, out_dir)
    assignments = run_assign(mesh, atlas, index, config, out_dir)
    return atlas, assignments
