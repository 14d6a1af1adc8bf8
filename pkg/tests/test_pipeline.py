from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from meshtex import cli, pipeline, procedural
from meshtex.geometry import write_mesh
from meshtex.matindex import MaterialIndex, ingest_database
from meshtex.pipeline import PipelineConfig, PipelineError, load_config, run_assign, run_texture


# --- configuration ---


def test_config_defaults():
    cfg = PipelineConfig()
    assert cfg.grid_resolution == 1600
    assert cfg.tile_count == 16
    assert cfg.tile_resolution == 400
    assert cfg.atlas_resolution == 1024
    assert cfg.inpaint_resolution == 512
    assert cfg.pass1_steps == 50
    assert cfg.pass2_steps == 20
    assert cfg.control_weights == (0.5, 0.5)
    assert cfg.fibonacci_n == 150
    assert cfg.backend == "mock"
    assert cfg.embed_endpoint == "mock"
    assert cfg.llm_endpoint is None
    assert cfg.seed == 0
    cfg.validate()
    snap = cfg.snapshot()
    assert snap["control_weights"] == [0.5, 0.5]
    assert snap["grid_resolution"] == 1600


def test_load_config_ini_and_overrides(tmp_path):
    ini = tmp_path / "cfg.ini"
    ini.write_text(
        "[pipeline]\n"
        "grid_resolution = 320\n"
        "seed = 7\n"
        "control_weights = 0.4, 0.6\n"
        "llm_endpoint = none\n"
        "prompt = cracked clay\n"
    )
    cfg = load_config(ini)
    assert cfg.grid_resolution == 320
    assert cfg.seed == 7
    assert cfg.control_weights == (0.4, 0.6)
    assert cfg.llm_endpoint is None
    assert cfg.prompt == "cracked clay"
    assert cfg.atlas_resolution == 1024  # untouched default

    over = load_config(ini, {"seed": 9, "prompt": None})
    assert over.seed == 9  # explicit override wins
    assert over.prompt == "cracked clay"  # None override is ignored


def test_load_config_rejects_unknown_key(tmp_path):
    ini = tmp_path / "bad.ini"
    ini.write_text("[pipeline]\nnot_a_knob = 1\n")
    with pytest.raises(ValueError):
        load_config(ini)
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "missing.ini")


@pytest.mark.parametrize(
    "kwargs",
    [
        {"tile_count": 12},
        {"atlas_resolution": 1022},
        {"grid_resolution": 0},
        {"pass1_steps": 10, "pass2_steps": 20},
        {"retrieval_w": 1.5},
        {"fibonacci_n": 0},
    ],
)
def test_config_validation_errors(kwargs):
    with pytest.raises(ValueError):
        PipelineConfig(**kwargs).validate()


# --- texture pipeline (reduced scale) ---


def small_config(**kw) -> PipelineConfig:
    base = dict(
        prompt="mossy sandstone",
        grid_resolution=320,
        atlas_resolution=256,
        inpaint_resolution=128,
        fibonacci_n=40,
        candidate_resolution=64,
    )
    base.update(kw)
    return PipelineConfig(**base)


@pytest.fixture(scope="module")
def textured(tmp_path_factory):
    mesh = procedural.armchair()
    out = tmp_path_factory.mktemp("run")
    atlas = run_texture(mesh, small_config(), out)
    return mesh, atlas, out


def test_run_texture_covers_every_occupied_texel(textured):
    _, atlas, out = textured
    assert atlas.num_uncovered() == 0
    assert atlas.occupied.sum() > 1000
    covered = atlas.color[atlas.occupied]
    assert (covered >= 0.0).all() and (covered <= 1.0).all()
    assert (out / "atlas.png").exists()
    assert (out / "coverage.png").exists()


def test_run_texture_manifest_structure(textured):
    _, _, out = textured
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["version"] == 1
    assert manifest["config"]["grid_resolution"] == 320
    assert manifest["mesh"]["parts"] == ["cushion", "frame"]
    assert manifest["mesh"]["occupied_texels"] > 0
    assert manifest["passes"]["grid_views"] == 16
    completion = manifest["passes"]["completion"]
    assert isinstance(completion, list)
    assert len(completion) <= PipelineConfig().max_completion_views
    assert manifest["passes"]["hole_fill_texels"] >= 0


def test_run_texture_is_deterministic(textured, tmp_path):
    mesh, _, out = textured
    run_texture(procedural.armchair(), small_config(), tmp_path)
    assert (tmp_path / "atlas.png").read_bytes() == (out / "atlas.png").read_bytes()
    assert (tmp_path / "manifest.json").read_bytes() == (out / "manifest.json").read_bytes()


def test_run_texture_maps_backend_failure(tmp_path):
    mesh = procedural.armchair()
    cfg = small_config(backend="http://127.0.0.1:9")
    with pytest.raises(PipelineError):
        run_texture(mesh, cfg)


# --- assignment pipeline ---


def _fixture_file(tmp_path) -> str:
    fix = tmp_path / "llm.json"
    fix.write_text(
        json.dumps(
            {"armchair": {"parts": {"cushion": "fabric", "frame": "wood"}, "physical_size_m": 1.0}}
        )
    )
    return f"fixtures:{fix}"


def test_run_assign_exports_manifest(textured, material_db, tmp_path):
    mesh, atlas, _ = textured
    index = ingest_database(material_db)
    cfg = small_config(object_name="armchair", llm_endpoint=_fixture_file(tmp_path))
    out = tmp_path / "assigned"
    assignments = run_assign(mesh, atlas, index, cfg, out)
    assert [a.part_id for a in assignments] == [0, 1]
    payload = json.loads((out / "assignment.json").read_text())
    got = {p["part_name"]: p["category"] for p in payload["parts"]}
    assert got == {"cushion": "fabric", "frame": "wood"}


def test_run_assign_requires_records(textured):
    mesh, atlas, _ = textured
    empty = MaterialIndex(root=Path("."), records=[])
    with pytest.raises(PipelineError):
        run_assign(mesh, atlas, empty, small_config())


# --- command line ---


@pytest.fixture(scope="module")
def cli_env(tmp_path_factory, material_db, textured):
    root = tmp_path_factory.mktemp("cli")
    mesh_path = root / "armchair.obj"
    write_mesh(mesh_path, procedural.armchair())
    ini = root / "small.ini"
    ini.write_text(
        "[pipeline]\n"
        "grid_resolution = 320\n"
        "atlas_resolution = 256\n"
        "inpaint_resolution = 128\n"
        "fibonacci_n = 40\n"
        "candidate_resolution = 64\n"
    )
    fixtures = root / "fixtures.json"
    fixtures.write_text(
        json.dumps(
            {"armchair": {"parts": {"cushion": "fabric", "frame": "wood"}, "physical_size_m": 1.0}}
        )
    )
    return {
        "root": root,
        "mesh": str(mesh_path),
        "ini": str(ini),
        "fixtures": str(fixtures),
        "db": material_db,
        "texture_out": str(textured[2]),
    }


def test_cli_texture_writes_run_dir(cli_env, capsys):
    out = cli_env["root"] / "tex"
    code = cli.main(
        [
            "texture",
            "--mesh", cli_env["mesh"],
            "--prompt", "mossy sandstone",
            "--config", cli_env["ini"],
            "--out", str(out),
        ]
    )
    assert code == 0
    assert (out / "atlas.png").exists()
    assert (out / "coverage.png").exists()
    assert (out / "manifest.json").exists()
    assert "atlas written" in capsys.readouterr().out


def test_cli_ingest_then_assign(cli_env, capsys):
    index_path = cli_env["root"] / "index.json"
    assert cli.main(["ingest", "--db", cli_env["db"], "--out", str(index_path)]) == 0
    assert "indexed 64 records" in capsys.readouterr().out

    out = cli_env["root"] / "assigned"
    code = cli.main(
        [
            "assign",
            "--mesh", cli_env["mesh"],
            "--atlas", str(Path(cli_env["texture_out"]) / "atlas.png"),
            "--index", str(index_path),
            "--fixtures", cli_env["fixtures"],
            "--config", cli_env["ini"],
            "--out", str(out),
        ]
    )
    assert code == 0
    printed = capsys.readouterr().out
    assert "cushion" in printed and "frame" in printed
    payload = json.loads((out / "assignment.json").read_text())
    # object name defaulted to the mesh filename stem, so fixtures applied
    got = {p["part_name"]: p["category"] for p in payload["parts"]}
    assert got == {"cushion": "fabric", "frame": "wood"}


def test_cli_missing_mesh_is_input_error(cli_env, capsys):
    code = cli.main(
        [
            "texture",
            "--mesh", str(cli_env["root"] / "nope.obj"),
            "--prompt", "x",
            "--out", str(cli_env["root"] / "nope_out"),
        ]
    )
    assert code == 2
    assert "error" in capsys.readouterr().err


def test_cli_bad_config_is_input_error(cli_env, capsys):
    bad = cli_env["root"] / "bad.ini"
    bad.write_text("[pipeline]\nwibble = 3\n")
    code = cli.main(
        [
            "texture",
            "--mesh", cli_env["mesh"],
            "--prompt", "x",
            "--config", str(bad),
            "--out", str(cli_env["root"] / "bad_out"),
        ]
    )
    assert code == 2
    capsys.readouterr()


def test_cli_unreachable_backend_is_backend_error(cli_env, capsys):
    code = cli.main(
        [
            "texture",
            "--mesh", cli_env["mesh"],
            "--prompt", "x",
            "--config", cli_env["ini"],
            "--backend", "http://127.0.0.1:9",
            "--out", str(cli_env["root"] / "backend_out"),
        ]
    )
    assert code == 3
    assert "backend error" in capsys.readouterr().err
