from __future__ import annotations

import json

import numpy as np
import pytest

from meshtex import matindex
from meshtex.imageops import save_png, srgb_to_lab
from meshtex.matindex import (
    EmbeddingBackendError,
    MaterialIndexError,
    UnknownCategoryError,
    bin_centers,
    call_embed,
    color_distance,
    compute_lab_histogram,
    compute_query_features,
    ingest_database,
    load_index,
    load_swatch,
    mock_embed,
    prominent_colors,
    save_index,
    search,
)


# --- histogram ---


def test_histogram_matches_bruteforce(rng):
    img = rng.random((12, 12, 3)).astype(np.float32)
    hist = compute_lab_histogram(img)
    assert hist.shape == (8, 32, 32)
    assert abs(hist.sum() - 1.0) < 1e-6

    lab = srgb_to_lab(img).reshape(-1, 3)
    expected = np.zeros((8, 32, 32))
    for L, a, b in lab:
        il = min(max(int(L / 100.0 * 8), 0), 7)
        ia = min(max(int((a + 110.0) / 220.0 * 32), 0), 31)
        ib = min(max(int((b + 110.0) / 220.0 * 32), 0), 31)
        expected[il, ia, ib] += 1.0
    np.testing.assert_allclose(hist, expected / len(lab), atol=1e-12)


def test_histogram_mask_restricts_pixels(rng):
    img = rng.random((8, 8, 3)).astype(np.float32)
    mask = np.zeros((8, 8), dtype=bool)
    mask[:4] = True
    np.testing.assert_allclose(
        compute_lab_histogram(img, mask), compute_lab_histogram(img[:4]), atol=1e-12
    )
    with pytest.raises(ValueError):
        compute_lab_histogram(img, np.zeros((8, 8), dtype=bool))


def test_prominent_colors_suppresses_neighborhood():
    h = np.zeros((8, 32, 32))
    h[4, 10, 20] = 0.4
    h[4, 10, 21] = 0.1  # neighbor bin, absorbed by the first mode
    h[2, 5, 5] = 0.3
    h[7, 0, 0] = 0.2
    labs, masses = prominent_colors(h)
    np.testing.assert_allclose(masses, [0.5, 0.3, 0.2, 0, 0, 0, 0], atol=1e-12)
    cl, ca, cb = bin_centers()
    np.testing.assert_allclose(labs[0], [cl[4], ca[10], cb[20]])
    np.testing.assert_allclose(labs[1], [cl[2], ca[5], cb[5]])
    # padding slots are neutral gray with zero mass
    np.testing.assert_allclose(labs[3:], np.tile([50.0, 0.0, 0.0], (4, 1)))


def test_prominent_colors_mass_sorted(rng):
    hist = compute_lab_histogram(rng.random((16, 16, 3)).astype(np.float32))
    _, masses = prominent_colors(hist)
    assert (np.diff(masses) <= 0).all()
    assert masses.sum() <= 1.0 + 1e-9


# --- color transport ---


def _set(*pairs):
    labs = np.array([p[0] for p in pairs], dtype=np.float64)
    mass = np.array([p[1] for p in pairs], dtype=np.float64)
    return labs, mass


def test_color_distance_simple_cases():
    a = _set(([50.0, 0.0, 0.0], 1.0))
    assert color_distance(a[0], a[1], a[0], a[1]) == 0.0

    b = _set(([50.0, 10.0, 0.0], 1.0))
    assert color_distance(a[0], a[1], b[0], b[1]) == pytest.approx(10.0)

    split = _set(([50.0, 0.0, 10.0], 0.5), ([50.0, 0.0, -10.0], 0.5))
    assert color_distance(a[0], a[1], split[0], split[1]) == pytest.approx(10.0)


def test_color_distance_unmatched_mass_is_free():
    a = _set(([50.0, 0.0, 0.0], 1.0))
    b = _set(([50.0, 5.0, 0.0], 0.3))
    assert color_distance(a[0], a[1], b[0], b[1]) == pytest.approx(1.5)


def test_color_distance_prefers_closest_pairs_first():
    a = _set(([0.0, 0.0, 0.0], 0.5), ([100.0, 0.0, 0.0], 0.5))
    b = _set(([10.0, 0.0, 0.0], 0.5), ([90.0, 0.0, 0.0], 0.5))
    # both pairs at distance 10; cross-matching would cost 90 and 80
    assert color_distance(a[0], a[1], b[0], b[1]) == pytest.approx(10.0)


# --- embedding ---


def test_mock_embed_unit_norm(rng):
    v = mock_embed(rng.random((48, 48, 3)).astype(np.float32))
    assert v.shape == (51,)
    assert np.linalg.norm(v) == pytest.approx(1.0, abs=1e-9)


def test_mock_embed_deterministic_and_discriminative(rng):
    a = rng.random((32, 32, 3)).astype(np.float32)
    b = rng.random((32, 32, 3)).astype(np.float32)
    np.testing.assert_array_equal(mock_embed(a), mock_embed(a))
    assert not np.allclose(mock_embed(a), mock_embed(b))


class _FakeResponse:
    def __init__(self, payload):
        self.payload = payload

    def raise_for_status(self):
        pass

    def json(self):
        return self.payload


def test_call_embed_http_normalizes(monkeypatch, rng):
    monkeypatch.setattr(
        matindex._requests, "post", lambda url, json=None, timeout=None: _FakeResponse({"vector": [3.0, 4.0]})
    )
    v = call_embed(rng.random((8, 8, 3)), "http://emb")
    np.testing.assert_allclose(v, [0.6, 0.8])


def test_call_embed_http_failure(monkeypatch, rng):
    import requests

    def boom(url, json=None, timeout=None):
        raise requests.ConnectionError("down")

    monkeypatch.setattr(matindex._requests, "post", boom)
    with pytest.raises(EmbeddingBackendError):
        call_embed(rng.random((8, 8, 3)), "http://emb")

    monkeypatch.setattr(
        matindex._requests, "post", lambda url, json=None, timeout=None: _FakeResponse({"vector": [0.0, 0.0]})
    )
    with pytest.raises(EmbeddingBackendError):
        call_embed(rng.random((8, 8, 3)), "http://emb")


# --- ingestion and persistence ---


@pytest.fixture(scope="module")
def index(material_db):
    return ingest_database(material_db)


def test_ingest_builds_all_preset_records(index):
    assert len(index.records) == 64  # 16 categories x 1 material x 4 presets
    assert len(index.categories()) == 16
    keys = {r.key for r in index.records}
    assert len(keys) == 64
    for r in index.records:
        assert r.histogram.shape == (8, 32, 32)
        assert abs(r.histogram.sum() - 1.0) < 1e-6
        assert np.linalg.norm(r.embedding) == pytest.approx(1.0, abs=1e-9)
        assert "basecolor" in r.maps


def test_reingest_is_byte_identical(material_db):
    p = ingest_database(material_db)
    first = (p.root / "index.json").read_bytes()
    ingest_database(material_db)
    assert (p.root / "index.json").read_bytes() == first


def test_save_load_round_trip(index, tmp_path):
    out = save_index(index, tmp_path / "copy.json")
    loaded = load_index(index.root, out)
    assert len(loaded.records) == len(index.records)
    a, b = index.records[5], loaded.records[5]
    assert (a.id, a.category, a.preset_id, a.physical_size) == (b.id, b.category, b.preset_id, b.physical_size)
    np.testing.assert_allclose(a.embedding, b.embedding)
    np.testing.assert_allclose(a.histogram, b.histogram)
    assert a.maps == b.maps


def test_load_index_version_and_missing(tmp_path):
    with pytest.raises(MaterialIndexError):
        load_index(tmp_path)
    (tmp_path / "index.json").write_text(json.dumps({"version": 99, "records": []}))
    with pytest.raises(MaterialIndexError):
        load_index(tmp_path)


def test_ingest_skips_malformed_entries(tmp_path, rng):
    ok = tmp_path / "good"
    ok.mkdir()
    save_png(ok / "basecolor.png", rng.random((8, 8, 3)))
    (ok / "material.json").write_text(
        json.dumps(
            {
                "category": "wood",
                "physical_size_m": 2.0,
                "presets": [{"id": "p0"}, {"id": "p1", "basecolor_scale": [0.5, 0.5, 0.5]}],
            }
        )
    )
    (tmp_path / "nojson").mkdir()
    save_png(tmp_path / "nojson" / "basecolor.png", rng.random((8, 8, 3)))
    bad = tmp_path / "badjson"
    bad.mkdir()
    (bad / "material.json").write_text("{nope")
    save_png(bad / "basecolor.png", rng.random((8, 8, 3)))
    nobase = tmp_path / "nobase"
    nobase.mkdir()
    (nobase / "material.json").write_text(json.dumps({"category": "metal"}))

    idx = ingest_database(tmp_path)
    assert sorted(r.key for r in idx.records) == ["good/p0", "good/p1"]
    assert idx.records[0].physical_size == 2.0
    # the scaled preset sees a darker swatch, so its features differ
    assert not np.allclose(idx.records[0].embedding, idx.records[1].embedding)


def test_explicit_swatch_wins_over_basecolor(tmp_path, rng):
    mat = tmp_path / "mat"
    mat.mkdir()
    base = rng.random((8, 8, 3))
    sw = np.clip(base * 0.25, 0.0, 1.0)
    save_png(mat / "basecolor.png", base)
    save_png(mat / "swatch.png", sw)
    (mat / "material.json").write_text(json.dumps({"category": "stone"}))
    idx = ingest_database(tmp_path)
    got = load_swatch(tmp_path, idx.records[0])
    assert abs(got.mean() - sw.mean()) < 2.0 / 255.0


# --- search ---


def test_search_every_swatch_ranks_itself_first(index):
    for rec in index.records:
        q = compute_query_features(load_swatch(index.root, rec))
        ranked = search(index, q)
        assert ranked[0][0].key == rec.key
        assert ranked[0][1] < ranked[1][1]


def test_search_category_filters_and_uncategorized_scans_all(index):
    cat = index.records[0].category
    q = compute_query_features(load_swatch(index.root, index.records[0]))
    within = search(index, q, category=cat)
    assert {r.category for r, _ in within} == {cat}
    assert len(within) == 4
    assert len(search(index, q, category="uncategorized")) == 64
    with pytest.raises(UnknownCategoryError):
        search(index, q, category="no_such_thing")


def test_search_rejects_mismatched_embedding_dims(index):
    q = compute_query_features(load_swatch(index.root, index.records[0]))
    q.embedding = np.ones(7) / np.sqrt(7.0)
    with pytest.raises(ValueError, match="embedding dimension mismatch"):
        search(index, q)


def test_search_w_zero_is_pure_embedding_order(index, rng):
    q = compute_query_features(rng.random((32, 32, 3)).astype(np.float32))
    ranked = search(index, q, w=0.0)
    d_clip = {r.key: 1.0 - float(q.embedding @ r.embedding) for r in index.records}
    expected = sorted(index.records, key=lambda r: (d_clip[r.key], r.id, r.preset_id))
    assert [r.key for r, _ in ranked] == [r.key for r in expected]


def test_search_combines_normalized_components(index, rng):
    w = 0.37
    q = compute_query_features(rng.random((24, 24, 3)).astype(np.float32))
    cands = index.records
    d_clip = np.array([1.0 - float(q.embedding @ r.embedding) for r in cands])
    d_color = np.array(
        [
            color_distance(q.prominent_lab, q.prominent_mass, r.prominent_lab, r.prominent_mass)
            for r in cands
        ]
    )
    expected = {
        r.key: float(dc / d_clip.max() * (1.0 - w) + dl / d_color.max() * w)
        for r, dc, dl in zip(cands, d_clip, d_color)
    }
    for rec, score in search(index, q, w=w):
        assert score == pytest.approx(expected[rec.key], abs=1e-9)


def test_search_scores_ascending(index, rng):
    q = compute_query_features(rng.random((16, 16, 3)).astype(np.float32))
    scores = [s for _, s in search(index, q)]
    assert scores == sorted(scores)
