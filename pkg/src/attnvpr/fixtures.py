"""Deterministic synthetic fixtures for tests and the demo pipeline.

Everything here is desk-scale: tiny feature grids, geotags on a coordinate
grid, and planted query/database correspondences with known retrieval
outcomes.
"""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

from .aggregation import ModelProfile, save_profile
from .tensor_io import (
    FeatureMap,
    Manifest,
    ManifestEntry,
    save_manifest,
    write_feature_map,
)

# grid spacing of ~0.001 deg latitude is ~111 m, far beyond a 25 m threshold
FAR_OFFSET_DEG = 0.05
NEAR_OFFSET_DEG = 0.00005  # ~5.5 m


def _write_fixture(out_dir: Path, db_maps, db_entries, q_maps, q_entries, attn_texts, profile):
    features = out_dir / "features"
    attention = out_dir / "attention"
    features.mkdir(parents=True, exist_ok=True)
    attention.mkdir(parents=True, exist_ok=True)
    for fm in db_maps + q_maps:
        write_feature_map(fm, features / f"{fm.image_id}.fmap")
    for image_id, text in attn_texts.items():
        (attention / f"{image_id}.attn.json").write_text(text, encoding="utf-8")
    save_manifest(Manifest(db_entries), out_dir / "db_manifest.csv")
    save_manifest(Manifest(q_entries), out_dir / "query_manifest.csv")
    save_profile(profile, out_dir / "model.toml")


def gen_fixture(seed: int, n_db: int, n_queries: int, out_dir) -> Path:
    """Random synthetic dataset: every query is a noisy copy of a database
    image and geotagged next to it, so baseline retrieval mostly succeeds.
    Attention files mix the "None" case with random point lists.

    Same seed => byte-identical fixture tree.
    """
    if n_db < 1 or n_queries < 1:
        raise ValueError("counts must be >= 1")
    out_dir = Path(out_dir)
    rng = np.random.default_rng(seed)
    c, h, w = 8, 4, 4

    db_maps, db_entries = [], []
    for i in range(n_db):
        data = rng.uniform(0.0, 1.0, size=(c, h, w)).astype(np.float32)
        image_id = f"db{i:04d}"
        db_maps.append(FeatureMap(image_id=image_id, data=data))
        db_entries.append(
            ManifestEntry(
                id=image_id,
                path=f"features/{image_id}.fmap",
                lat=round(0.1 + FAR_OFFSET_DEG * i, 7),
                lon=0.0,
            )
        )

    q_maps, q_entries, attn_texts = [], [], {}
    for i in range(n_queries):
        match = i % n_db
        noise = 1.0 + 0.02 * rng.standard_normal(size=(c, h, w))
        data = np.clip(db_maps[match].data * noise, 0.0, None).astype(np.float32)
        image_id = f"q{i:04d}"
        q_maps.append(FeatureMap(image_id=image_id, data=data))
        q_entries.append(
            ManifestEntry(
                id=image_id,
                path=f"features/{image_id}.fmap",
                lat=round(db_entries[match].lat + NEAR_OFFSET_DEG, 7),
                lon=0.0,
            )
        )
        if i % 3 == 0:
            attn_texts[image_id] = "None"
        else:
            n_points = int(rng.integers(1, 5))
            points = [
                {
                    "center": [round(float(rng.uniform()), 4), round(float(rng.uniform()), 4)],
                    "weight": round(float(rng.uniform(0.0, 2.0)), 4),
                    "reasoning": "synthetic fixture point",
                }
                for _ in range(n_points)
            ]
            attn_texts[image_id] = json.dumps(points)

    profile = ModelProfile(aggregator="gem", p=3.0, descriptor_dim=c)
    _write_fixture(out_dir, db_maps, db_entries, q_maps, q_entries, attn_texts, profile)
    return out_dir


def _const_map(image_id: str, values) -> FeatureMap:
    """C x 1 x 1 feature map; under GeM any p reproduces the channel values,
    so descriptors can be planted exactly."""
    arr = np.asarray(values, dtype=np.float32).reshape(-1, 1, 1)
    return FeatureMap(image_id=image_id, data=arr)


# first-correct ranks planted for the ten queries: 6 recalled at N=1,
# two more by N=5, one more by N=10, one guaranteed miss
RECALL_PLANT_RANKS = (1, 1, 1, 1, 1, 1, 3, 3, 7, 12)
RECALL_PLANT_EXPECTED = {1: 60.0, 5: 80.0, 10: 90.0}


def plant_recall_fixture(out_dir) -> Path:
    """Ten queries over a planted database with exact first-correct ranks
    RECALL_PLANT_RANKS, yielding Recall@1/5/10 = 60/80/90 at 25 m."""
    out_dir = Path(out_dir)
    dim = 16
    junk_axis = 10  # shared off-query axis used to pad decoys to unit norm

    db_maps, db_entries = [], []
    q_maps, q_entries, attn_texts = [], [], {}

    def add_db(image_id, vec, lat):
        db_maps.append(_const_map(image_id, vec))
        db_entries.append(
            ManifestEntry(id=image_id, path=f"features/{image_id}.fmap", lat=lat, lon=0.0)
        )

    for i, rank in enumerate(RECALL_PLANT_RANKS):
        qid = f"q{i:02d}"
        q_lat = round(0.1 + FAR_OFFSET_DEG * i, 7)
        q_vec = np.zeros(dim)
        q_vec[i] = 1.0
        q_maps.append(_const_map(qid, q_vec))
        q_entries.append(
            ManifestEntry(id=qid, path=f"features/{qid}.fmap", lat=q_lat, lon=0.0)
        )
        attn_texts[qid] = "None"

        # decoys rank above the correct entry but sit far away
        for d in range(rank - 1):
            sim = 0.95 - 0.01 * d
            vec = np.zeros(dim)
            vec[i] = sim
            vec[junk_axis] = math.sqrt(1.0 - sim * sim)
            add_db(f"decoy{i:02d}_{d:02d}", vec, lat=round(q_lat + FAR_OFFSET_DEG / 2, 7))
        correct = np.zeros(dim)
        correct[i] = 0.5
        correct[junk_axis] = math.sqrt(1.0 - 0.25)
        add_db(f"near{i:02d}", correct, lat=round(q_lat + NEAR_OFFSET_DEG, 7))

    profile = ModelProfile(aggregator="gem", p=1.0, descriptor_dim=dim)
    _write_fixture(out_dir, db_maps, db_entries, q_maps, q_entries, attn_texts, profile)
    return out_dir


RECOVERY_QUERY_ID = "qrec"
RECOVERY_CORRECT_ID = "dbcorrect"
RECOVERY_WRONG_ID = "dbwrong"


def plant_recovery_fixture(out_dir) -> Path:
    """Noise-region instance: a transient high-magnitude region (channel 1,
    top-left 2x2 block) dominates the baseline descriptor and retrieves the
    wrong entry; down-weighting that block via attention recovers the true
    match. Recall@1 goes 0% at alpha=0 to 100% at alpha=1."""
    out_dir = Path(out_dir)
    c, h, w = 4, 4, 4

    correct = np.zeros((c, h, w), dtype=np.float32)
    correct[0] = 1.0
    wrong = np.zeros((c, h, w), dtype=np.float32)
    wrong[1] = 1.0

    query = np.zeros((c, h, w), dtype=np.float32)
    query[0] = 2.0
    query[0, :2, :2] = 0.0  # signal channel absent from the noise block
    query[1, :2, :2] = 10.0  # transient noise dominates the plain mean

    # zero-weight points at the four noise cell centers suppress the block
    noise_cells = [(0.125, 0.125), (0.375, 0.125), (0.125, 0.375), (0.375, 0.375)]
    points = [
        {"center": [x, y], "weight": 0.0, "reasoning": "transient noise region"}
        for x, y in noise_cells
    ]

    q_lat = 0.2
    db_maps = [
        _const_map_like(RECOVERY_CORRECT_ID, correct),
        _const_map_like(RECOVERY_WRONG_ID, wrong),
    ]
    db_entries = [
        ManifestEntry(
            id=RECOVERY_CORRECT_ID,
            path=f"features/{RECOVERY_CORRECT_ID}.fmap",
            lat=round(q_lat + NEAR_OFFSET_DEG, 7),
            lon=0.0,
        ),
        ManifestEntry(
            id=RECOVERY_WRONG_ID,
            path=f"features/{RECOVERY_WRONG_ID}.fmap",
            lat=round(q_lat + FAR_OFFSET_DEG, 7),
            lon=0.0,
        ),
    ]
    q_maps = [FeatureMap(image_id=RECOVERY_QUERY_ID, data=query)]
    q_entries = [
        ManifestEntry(
            id=RECOVERY_QUERY_ID,
            path=f"features/{RECOVERY_QUERY_ID}.fmap",
            lat=q_lat,
            lon=0.0,
        )
    ]
    attn_texts = {RECOVERY_QUERY_ID: json.dumps(points)}
    profile = ModelProfile(aggregator="gem", p=1.0, descriptor_dim=c)
    _write_fixture(out_dir, db_maps, db_entries, q_maps, q_entries, attn_texts, profile)
    return out_dir


def _const_map_like(image_id: str, data: np.ndarray) -> FeatureMap:
    return FeatureMap(image_id=image_id, data=np.asarray(data, dtype=np.float32))
