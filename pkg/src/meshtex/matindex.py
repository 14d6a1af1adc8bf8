"""Material database: ingestion, color/embedding features, and search.

A material lives in `root/<material_id>/` as `material.json` plus map PNGs
(basecolor, normal, roughness, metallic, height). Each preset of a material
becomes one searchable record. Features per record: an embedding vector from
the embedding backend, a Lab histogram (8 L bins, 32 a* bins, 32 b* bins),
and the 7 most prominent colors.

Search is a linear scan over the requested category: combined distance
d = d_clip * (1 - w) + d_color * w with both components normalized by their
per-query maximum over the candidate set.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import requests as _requests

from .imageops import from_u8, load_png, png_b64, resize, srgb_to_lab

log = logging.getLogger(__name__)

INDEX_VERSION = 1
INDEX_FILENAME = "index.json"
L_BINS, A_BINS, B_BINS = 8, 32, 32
L_RANGE = (0.0, 100.0)
AB_RANGE = (-110.0, 110.0)
PROMINENT_K = 7
DEFAULT_W = 0.8
UNCATEGORIZED = "uncategorized"
MOCK_EMBED = "mock"
MAP_NAMES = ("basecolor", "normal", "roughness", "metallic", "height")

# neutral gray pad for missing prominent slots: Lab (50, 0, 0), mass 0
_PAD_LAB = np.array([50.0, 0.0, 0.0])


class MaterialIndexError(Exception):
    pass


class UnknownCategoryError(MaterialIndexError):
    pass


class EmbeddingBackendError(MaterialIndexError):
    pass


@dataclass
class QueryFeatures:
    embedding: np.ndarray  # unit-norm
    histogram: np.ndarray  # (8, 32, 32), sums to 1
    prominent_lab: np.ndarray  # (7, 3)
    prominent_mass: np.ndarray  # (7,)


@dataclass
class MaterialRecord:
    id: str
    category: str
    preset_id: str
    physical_size: float  # meters per tile
    embedding: np.ndarray
    histogram: np.ndarray
    prominent_lab: np.ndarray
    prominent_mass: np.ndarray
    maps: dict = field(default_factory=dict)  # map name -> path relative to db root
    basecolor_scale: tuple = (1.0, 1.0, 1.0)

    @property
    def key(self) -> str:
        return f"{self.id}/{self.preset_id}"


@dataclass
class MaterialIndex:
    root: Path
    records: list[MaterialRecord]

    def categories(self) -> list[str]:
        return sorted({r.category for r in self.records})

    def candidates(self, category: str) -> list[MaterialRecord]:
        if category == UNCATEGORIZED:
            out = list(self.records)
        else:
            out = [r for r in self.records if r.category == category]
            if not out and category not in self.categories():
                raise UnknownCategoryError(f"no such category: {category!r}")
        if not out:
            raise UnknownCategoryError(f"category {category!r} has no records")
        return out

    def get(self, material_id: str, preset_id: str) -> MaterialRecord:
        for r in self.records:
            if r.id == material_id and r.preset_id == preset_id:
                return r
        raise MaterialIndexError(f"no record {material_id}/{preset_id}")


# -- feature extraction -------------------------------------------------------


def compute_lab_histogram(image: np.ndarray, mask: np.ndarray | None = None) -> np.ndarray:
    """Normalized 3D Lab histogram of the (optionally masked) pixels."""
    lab = srgb_to_lab(image).reshape(-1, 3)
    if mask is not None:
        keep = np.asarray(mask, dtype=bool).reshape(-1)
        lab = lab[keep]
    if len(lab) == 0:
        raise ValueError("histogram needs at least one unmasked pixel")
    il = np.clip((lab[:, 0] - L_RANGE[0]) / (L_RANGE[1] - L_RANGE[0]) * L_BINS, 0, L_BINS - 1).astype(np.int64)
    ia = np.clip((lab[:, 1] - AB_RANGE[0]) / (AB_RANGE[1] - AB_RANGE[0]) * A_BINS, 0, A_BINS - 1).astype(np.int64)
    ib = np.clip((lab[:, 2] - AB_RANGE[0]) / (AB_RANGE[1] - AB_RANGE[0]) * B_BINS, 0, B_BINS - 1).astype(np.int64)
    hist = np.zeros((L_BINS, A_BINS, B_BINS), dtype=np.float64)
    np.add.at(hist, (il, ia, ib), 1.0)
    return hist / len(lab)


def bin_centers() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    lw = (L_RANGE[1] - L_RANGE[0]) / L_BINS
    aw = (AB_RANGE[1] - AB_RANGE[0]) / A_BINS
    bw = (AB_RANGE[1] - AB_RANGE[0]) / B_BINS
    centers_l = L_RANGE[0] + (np.arange(L_BINS) + 0.5) * lw
    centers_a = AB_RANGE[0] + (np.arange(A_BINS) + 0.5) * aw
    centers_b = AB_RANGE[0] + (np.arange(B_BINS) + 0.5) * bw
    return centers_l, centers_a, centers_b


def prominent_colors(histogram: np.ndarray, k: int = PROMINENT_K) -> tuple[np.ndarray, np.ndarray]:
    """Top-k histogram modes with 3x3x3 neighborhood suppression.

    Greedy: take the max-mass bin, record its center Lab and the summed mass
    of the surrounding 3x3x3 block, zero that block, repeat. Pads with
    zero-mass neutral gray, then sorts by mass descending.
    """
    h = histogram.astype(np.float64).copy()
    cl, ca, cb = bin_centers()
    labs = np.tile(_PAD_LAB, (k, 1))
    masses = np.zeros(k)
    for i in range(k):
        flat = int(np.argmax(h))
        if h.reshape(-1)[flat] <= 0.0:
            break
        il, ia, ib = np.unravel_index(flat, h.shape)
        sl = slice(max(il - 1, 0), il + 2)
        sa = slice(max(ia - 1, 0), ia + 2)
        sb = slice(max(ib - 1, 0), ib + 2)
        masses[i] = h[sl, sa, sb].sum()
        labs[i] = (cl[il], ca[ia], cb[ib])
        h[sl, sa, sb] = 0.0
    order = np.argsort(-masses, kind="stable")
    return labs[order], masses[order]


def color_distance(a_lab, a_mass, b_lab, b_mass) -> float:
    """Greedy mass transport between two prominent-color sets.

    Repeatedly match the closest remaining pair in Lab, move as much mass as
    both sides still have, and accumulate mass x distance. Leftover mass on
    the heavier side (sets need not sum equally) goes unmatched.
    """
    ma = np.asarray(a_mass, dtype=np.float64).copy()
    mb = np.asarray(b_mass, dtype=np.float64).copy()
    dist = np.linalg.norm(
        np.asarray(a_lab, dtype=np.float64)[:, None, :] - np.asarray(b_lab, dtype=np.float64)[None, :, :],
        axis=2,
    )
    cost = 0.0
    for _ in range(len(ma) * len(mb)):
        open_pairs = (ma[:, None] > 0) & (mb[None, :] > 0)
        if not open_pairs.any():
            break
        masked = np.where(open_pairs, dist, np.inf)
        i, j = np.unravel_index(int(np.argmin(masked)), masked.shape)
        m = min(ma[i], mb[j])
        cost += m * dist[i, j]
        ma[i] -= m
        mb[j] -= m
    return float(cost)


def mock_embed(image: np.ndarray) -> np.ndarray:
    """Deterministic image embedding: 4x4 grid of mean Lab values plus three
    gradient-magnitude statistics, unit-normalized (51 dims)."""
    img = from_u8(np.asarray(image))
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    small = resize(img, (64, 64))
    lab = srgb_to_lab(small)
    cells = lab.reshape(4, 16, 4, 16, 3).mean(axis=(1, 3)).reshape(-1)
    gy, gx = np.gradient(lab[..., 0])
    g = np.hypot(gx, gy)
    stats = np.array([g.mean(), g.std(), np.percentile(g, 90)])
    vec = np.concatenate([cells, stats])
    n = np.linalg.norm(vec)
    if n < 1e-12:
        vec = np.zeros(51)
        vec[0] = 1.0
        return vec
    return vec / n


def call_embed(image: np.ndarray, endpoint: str = MOCK_EMBED, *, timeout: float = 60.0) -> np.ndarray:
    """Embedding backend: "mock" in-process, else HTTP POST
    {"image": <b64 png>} -> {"vector": [...]}. Output is re-normalized."""
    if endpoint == MOCK_EMBED:
        return mock_embed(image)
    try:
        resp = _requests.post(endpoint, json={"image": png_b64(image)}, timeout=timeout)
        resp.raise_for_status()
        vec = np.asarray(resp.json()["vector"], dtype=np.float64)
    except (_requests.RequestException, KeyError, ValueError) as exc:
        raise EmbeddingBackendError(f"embedding backend failed: {exc}") from exc
    n = np.linalg.norm(vec)
    if n < 1e-12:
        raise EmbeddingBackendError("embedding backend returned a zero vector")
    return vec / n


def compute_query_features(image: np.ndarray, mask=None, *, embed_endpoint: str = MOCK_EMBED) -> QueryFeatures:
    hist = compute_lab_histogram(image, mask)
    labs, masses = prominent_colors(hist)
    return QueryFeatures(
        embedding=call_embed(image, embed_endpoint),
        histogram=hist,
        prominent_lab=labs,
        prominent_mass=masses,
    )


# -- search -------------------------------------------------------------------


def search(
    index: MaterialIndex,
    query: QueryFeatures,
    category: str = UNCATEGORIZED,
    w: float = DEFAULT_W,
) -> list[tuple[MaterialRecord, float]]:
    """Rank the category's records by combined embedding + color distance.

    Raw components: d_clip = 1 - <q, r>; d_color = prominent-color transport
    cost. Each is normalized by its max over the candidates (all-zero when
    the max is 0), then combined as d_clip * (1 - w) + d_color * w.
    """
    cands = index.candidates(category)
    dims = {r.embedding.shape[0] for r in cands}
    if cands and dims != {query.embedding.shape[0]}:
        raise ValueError(
            f"embedding dimension mismatch: query {query.embedding.shape[0]}, index {sorted(dims)};"
            " ingest and assign must use the same embedding backend"
        )
    d_clip = np.array([1.0 - float(np.dot(query.embedding, r.embedding)) for r in cands])
    d_color = np.array(
        [
            color_distance(query.prominent_lab, query.prominent_mass, r.prominent_lab, r.prominent_mass)
            for r in cands
        ]
    )
    for d in (d_clip, d_color):
        m = d.max()
        d[:] = d / m if m > 0 else 0.0
    combined = d_clip * (1.0 - w) + d_color * w
    order = sorted(range(len(cands)), key=lambda i: (combined[i], cands[i].id, cands[i].preset_id))
    return [(cands[i], float(combined[i])) for i in order]


# -- ingestion and persistence ------------------------------------------------


def _record_features(swatch: np.ndarray, embed_endpoint: str):
    hist = compute_lab_histogram(swatch)
    labs, masses = prominent_colors(hist)
    emb = call_embed(swatch, embed_endpoint)
    return emb, hist, labs, masses


def load_swatch(root: Path, rec: MaterialRecord) -> np.ndarray:
    """The record's retrieval swatch: explicit swatch.png if present, else
    the basecolor map under the preset's color scale."""
    explicit = root / rec.id / "swatch.png"
    if explicit.exists():
        return load_png(explicit)
    img = load_png(root / rec.maps["basecolor"])
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    return np.clip(img * np.asarray(rec.basecolor_scale, dtype=np.float32), 0.0, 1.0)


def ingest_database(root, embed_endpoint: str = MOCK_EMBED) -> MaterialIndex:
    """Walk `root`, build one record per (material, preset), persist the
    index next to the data, and return it. Materials with missing metadata
    or basecolor are skipped with a warning."""
    root = Path(root)
    records: list[MaterialRecord] = []
    for matdir in sorted(p for p in root.iterdir() if p.is_dir()):
        meta_path = matdir / "material.json"
        if not meta_path.exists():
            log.warning("skipping %s: no material.json", matdir.name)
            continue
        try:
            meta = json.loads(meta_path.read_text())
        except json.JSONDecodeError as exc:
            log.warning("skipping %s: bad metadata (%s)", matdir.name, exc)
            continue
        maps = {}
        for name in MAP_NAMES:
            p = matdir / f"{name}.png"
            if p.exists():
                maps[name] = str(p.relative_to(root))
        if "basecolor" not in maps:
            log.warning("skipping %s: no basecolor map", matdir.name)
            continue
        presets = meta.get("presets") or [{"id": "default"}]
        for preset in presets:
            rec = MaterialRecord(
                id=matdir.name,
                category=str(meta.get("category", UNCATEGORIZED)),
                preset_id=str(preset.get("id", "default")),
                physical_size=float(meta.get("physical_size_m", 1.0)),
                embedding=np.zeros(1),
                histogram=np.zeros((L_BINS, A_BINS, B_BINS)),
                prominent_lab=np.tile(_PAD_LAB, (PROMINENT_K, 1)),
                prominent_mass=np.zeros(PROMINENT_K),
                maps=maps,
                basecolor_scale=tuple(preset.get("basecolor_scale", (1.0, 1.0, 1.0))),
            )
            try:
                swatch = load_swatch(root, rec)
                rec.embedding, rec.histogram, rec.prominent_lab, rec.prominent_mass = _record_features(
                    swatch, embed_endpoint
                )
            except (OSError, ValueError, EmbeddingBackendError) as exc:
                log.warning("skipping %s/%s: %s", rec.id, rec.preset_id, exc)
                continue
            records.append(rec)
    index = MaterialIndex(root=root, records=records)
    save_index(index)
    return index


def _sparse_hist(hist: np.ndarray) -> list:
    flat = hist.reshape(-1)
    nz = np.flatnonzero(flat)
    return [[int(i), float(flat[i])] for i in nz]


def _dense_hist(pairs) -> np.ndarray:
    hist = np.zeros(L_BINS * A_BINS * B_BINS, dtype=np.float64)
    for i, v in pairs:
        hist[int(i)] = float(v)
    return hist.reshape(L_BINS, A_BINS, B_BINS)


def save_index(index: MaterialIndex, path=None) -> Path:
    path = Path(path) if path else index.root / INDEX_FILENAME
    payload = {
        "version": INDEX_VERSION,
        "records": [
            {
                "id": r.id,
                "category": r.category,
                "preset_id": r.preset_id,
                "physical_size_m": r.physical_size,
                "embedding": [float(v) for v in r.embedding],
                "histogram": _sparse_hist(r.histogram),
                "prominent_lab": [[float(v) for v in row] for row in r.prominent_lab],
                "prominent_mass": [float(v) for v in r.prominent_mass],
                "maps": dict(sorted(r.maps.items())),
                "basecolor_scale": list(r.basecolor_scale),
            }
            for r in index.records
        ],
    }
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    return path


def load_index(root, path=None) -> MaterialIndex:
    root = Path(root)
    path = Path(path) if path else root / INDEX_FILENAME
    if not path.exists():
        raise MaterialIndexError(f"no index at {path}; run ingestion first")
    payload = json.loads(path.read_text())
    if payload.get("version") != INDEX_VERSION:
        raise MaterialIndexError(f"index version {payload.get('version')} != {INDEX_VERSION}")
    records = [
        MaterialRecord(
            id=r["id"],
            category=r["category"],
            preset_id=r["preset_id"],
            physical_size=float(r["physical_size_m"]),
            embedding=np.asarray(r["embedding"], dtype=np.float64),
            histogram=_dense_hist(r["histogram"]),
            prominent_lab=np.asarray(r["prominent_lab"], dtype=np.float64),
            prominent_mass=np.asarray(r["prominent_mass"], dtype=np.float64),
            maps=dict(r["maps"]),
            basecolor_scale=tuple(r.get("basecolor_scale", (1.0, 1.0, 1.0))),
        )
        for r in payload["records"]
    ]
    return MaterialIndex(root=root, records=records)
