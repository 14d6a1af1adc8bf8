#!/usr/bin/env python3
"""Generate a synthetic material database (and optionally its search index).

The database layout matches what `meshtex ingest` expects: one directory per
material with material.json and the five map PNGs. Useful for demos, tests,
and trying the assignment stage without a real material library.
"""
from __future__ import annotations

import argparse

from meshtex.matindex import ingest_database
from meshtex.procedural import CATEGORIES_16, build_material_db


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", required=True, help="database root directory to create")
    ap.add_argument("--materials-per-category", type=int, default=1)
    ap.add_argument("--presets", type=int, default=4, help="presets per material")
    ap.add_argument("--map-size", type=int, default=64, help="texture map edge in pixels")
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--skip-index", action="store_true", help="do not write index.json")
    args = ap.parse_args(argv)

    root = build_material_db(
        args.out,
        materials_per_category=args.materials_per_category,
        presets=args.presets,
        map_size=args.map_size,
        seed=args.seed,
    )
    n_materials = len(CATEGORIES_16) * args.materials_per_category
    print(f"wrote {n_materials} materials x {args.presets} presets to {root}")
    if not args.skip_index:
        index = ingest_database(root)
        print(f"indexed {len(index.records)} records to {root}/index.json")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
