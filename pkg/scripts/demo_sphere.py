#!/usr/bin/env python3
"""End-to-end demo on the built-in sphere, no external services needed.

Builds a synthetic material database, textures the sphere with the
deterministic mock backend, then retrieves one material per part. Everything
lands under --out: the texture atlas, coverage map, run manifest, material
assignment, and the database itself.
"""
from __future__ import annotations

import argparse
import json
import time
from pathlib import Path

from meshtex.matindex import ingest_database
from meshtex.pipeline import PipelineConfig, run_full
from meshtex.procedural import build_material_db, uv_sphere

QUICK = dict(grid_resolution=320, atlas_resolution=256, inpaint_resolution=128,
             fibonacci_n=40, candidate_resolution=64)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="demo_run", help="output directory")
    ap.add_argument("--prompt", default="weathered bronze")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--quick", action="store_true", help="reduced resolutions, a few seconds")
    args = ap.parse_args(argv)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    db = build_material_db(out / "db", map_size=32)
    index = ingest_database(db)
    print(f"material database: {len(index.records)} records under {db}")

    fixtures = out / "categories.json"
    fixtures.write_text(json.dumps(
        {"sphere": {"parts": {"upper": "metal", "lower": "ceramic"}, "physical_size_m": 1.0}}
    ))
    cfg = PipelineConfig(
        prompt=args.prompt,
        seed=args.seed,
        object_name="sphere",
        llm_endpoint=f"fixtures:{fixtures}",
        **(QUICK if args.quick else {}),
    )

    mesh = uv_sphere()
    t0 = time.perf_counter()
    atlas, assignments = run_full(mesh, cfg, index, out)
    dt = time.perf_counter() - t0
    occupied = int(atlas.occupied.sum())
    print(f"textured {mesh.num_triangles} triangles -> {occupied} texels in {dt:.1f}s")
    for a in assignments:
        print(f"  {a.part_name}: {a.material_id}/{a.preset_id} ({a.category})")
    print(f"outputs in {out}/: atlas.png coverage.png manifest.json assignment.json")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
