"""Command-line entry points.

Subcommands: texture (prompt -> atlas), ingest (material DB -> index),
assign (atlas + index -> per-part materials), full (all three in sequence).
Exit codes: 0 success, 2 input error, 3 backend error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import assign as assign_mod
from . import genproto, matindex, pipeline
from .atlas import AtlasError, bake_texel_geometry
from .geometry import MeshError, load_mesh, normalize_to_unit_sphere
from .imageops import load_png

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_BACKEND = 3

_INPUT_ERRORS = (
    MeshError,
    AtlasError,
    assign_mod.AssignmentError,
    matindex.UnknownCategoryError,
    FileNotFoundError,
    NotADirectoryError,
    ValueError,
    KeyError,
    OSError,
)
_BACKEND_ERRORS = (genproto.BackendError, matindex.EmbeddingBackendError)


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_mutually_exclusive_group()
    group.add_argument("--backend", help="image backend URL")
    group.add_argument("--mock", action="store_true", help="use the in-process mock backend (default)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meshtex", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="info-level logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("texture", help="texture a mesh from a text prompt")
    p.add_argument("--mesh", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="run directory for atlas + manifest")
    p.add_argument("--config", default=None, help="INI config file; flags win")
    _add_backend_flags(p)

    p = sub.add_parser("ingest", help="build the material index")
    p.add_argument("--db", required=True, help="material database root")
    p.add_argument("--out", default=None, help="index file (default <db>/index.json)")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--embed", help="embedding backend URL")
    group.add_argument("--mock", action="store_true", help="use the mock embedder (default)")

    p = sub.add_parser("assign", help="assign materials per part from a textured atlas")
    p.add_argument("--mesh", required=True)
    p.add_argument("--atlas", required=True, help="atlas PNG from the texture step")
    p.add_argument("--index", required=True, help="index file from the ingest step")
    p.add_argument("--out", required=True)
    group = p.add_mutually_exclusive_group()
    group.add_argument("--llm", help="category backend URL")
    group.add_argument("--fixtures", help="category fixtures JSON for the mock")
    p.add_argument("--mode", choices=("manifest", "baked"), default="manifest")
    p.add_argument("--object-name", default=None, help="default: mesh filename stem")
    p.add_argument("--config", default=None)

    p = sub.add_parser("full", help="texture, ingest and assign in one run")
    p.add_argument("--mesh", required=True)
    p.add_argument("--prompt", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--db", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--mode", choices=("manifest", "baked"), default="manifest")
    p.add_argument("--object-name", default=None, help="default: mesh filename stem")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--llm", help="category backend URL")
    group.add_argument("--fixtures", help="category fixtures JSON for the mock")
    _add_backend_flags(p)
    return parser


def _config_from_args(args, **extra) -> pipeline.PipelineConfig:
    overrides = dict(extra)
    for name in ("prompt", "seed"):
        if hasattr(args, name) and getattr(args, name) is not None:
            overrides[name] = getattr(args, name)
    if getattr(args, "backend", None):
        overrides["backend"] = args.backend
    if getattr(args, "llm", None):
        overrides["llm_endpoint"] = args.llm
    elif getattr(args, "fixtures", None):
        overrides["llm_endpoint"] = assign_mod.FIXTURE_PREFIX + args.fixtures
    if getattr(args, "mode", None):
        overrides["export_mode"] = args.mode
    if getattr(args, "object_name", None):
        overrides["object_name"] = args.object_name
    cfg = pipeline.load_config(getattr(args, "config", None), overrides)
    if cfg.object_name == "object" and getattr(args, "mesh", None):
        cfg.object_name = Path(args.mesh).stem
    return cfg


def _load_atlas_png(mesh, path, resolution=None):
    """Rebuild a TextureAtlas from an exported PNG plus the mesh's UVs."""
    color = load_png(path)
    if color.ndim == 2:
        color = np.repeat(color[..., None], 3, axis=2)
    atlas = bake_texel_geometry(mesh, color.shape[0])
    atlas.color = color.astype(np.float32)
    atlas.weight[atlas.occupied] = 1.0
    return atlas


def cmd_texture(args) -> int:
    config = _config_from_args(args)
    mesh = load_mesh(args.mesh)
    pipeline.run_texture(mesh, config, args.out)
    print(f"atlas written to {Path(args.out) / pipeline.ATLAS_NAME}")
    return EXIT_OK


def cmd_ingest(args) -> int:
    endpoint = args.embed if args.embed else matindex.MOCK_EMBED
    index = matindex.ingest_database(args.db, endpoint)
    out = Path(args.out) if args.out else Path(args.db) / matindex.INDEX_FILENAME
    matindex.save_index(index, out)
    print(f"indexed {len(index.records)} records to {out}")
    return EXIT_OK


def cmd_assign(args) -> int:
    config = _config_from_args(args)
    mesh = load_mesh(args.mesh)
    index = matindex.load_index(Path(args.index).parent, args.index)
    normalized = normalize_to_unit_sphere(mesh)
    atlas = _load_atlas_png(normalized, args.atlas)
    assignments = pipeline.run_assign(mesh, atlas, index, config, args.out)
    for a in assignments:
        print(f"{a.part_name}: {a.material_id}/{a.preset_id} ({a.category}, d={a.distance:.4f})")
    return EXIT_OK


def cmd_full(args) -> int:
    config = _config_from_args(args)
    mesh = load_mesh(args.mesh)
    index_path = Path(args.db) / matindex.INDEX_FILENAME
    if index_path.exists():
        index = matindex.load_index(args.db)
    else:
        index = matindex.ingest_database(args.db, config.embed_endpoint)
    pipeline.run_full(mesh, config, index, args.out)
    print(f"run complete: {args.out}")
    return EXIT_OK


_COMMANDS = {"texture": cmd_texture, "ingest": cmd_ingest, "assign": cmd_assign, "full": cmd_full}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return _COMMANDS[args.command](args)
    except _BACKEND_ERRORS as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except pipeline.PipelineError as exc:
        cause = exc.__cause__
        if isinstance(cause, _BACKEND_ERRORS):
            print(f"backend error: {exc}", file=sys.stderr)
            return EXIT_BACKEND
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except _INPUT_ERRORS as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
