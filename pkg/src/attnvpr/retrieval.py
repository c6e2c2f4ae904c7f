"""Exact cosine-similarity search and Average Query Expansion.

Search is exact brute force over unit vectors (blocked matrix products),
so rankings are bitwise reproducible. Ties in similarity are broken by
ascending database id to keep results deterministic across platforms.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimMismatch, EmptyDb, InsufficientHits
from .tensor_io import DescriptorDb, GeoTag


@dataclass(frozen=True)
class Hit:
    db_id: str
    similarity: float
    geotag: GeoTag


@dataclass(frozen=True)
class RankedList:
    query_id: str
    hits: tuple[Hit, ...]


@dataclass(frozen=True)
class QeConfig:
    alpha_qe: float = 0.8  # weight on the original query
    k: int = 5  # expansion depth

    def __post_init__(self):
        if not 0.0 <= self.alpha_qe <= 1.0:
            raise ValueError("alpha_qe must lie in [0, 1]")
        if self.k < 1:
            raise ValueError("k must be >= 1")


class SearchIndex:
    """Immutable exact-search structure over a DescriptorDb."""

    def __init__(self, db: DescriptorDb):
        if db.size == 0:
            raise EmptyDb("cannot build an index over an empty database")
        self.db = db
        self._rows = db.rows  # (N, dim), unit norm
        # id sort ranks used as the secondary sort key for similarity ties
        order = sorted(range(db.size), key=lambda i: db.ids[i])
        self._id_rank = np.empty(db.size, dtype=np.int64)
        self._id_rank[order] = np.arange(db.size)

    @property
    def dim(self) -> int:
        return self.db.dim

    def search(self, query: np.ndarray, query_id: str, n: int) -> RankedList:
        if n < 1:
            raise ValueError("N must be >= 1")
        query = np.asarray(query, dtype=np.float32).reshape(-1)
        if query.shape[0] != self.dim:
            raise DimMismatch(f"query dim {query.shape[0]} vs db dim {self.dim}")
        sims = self._rows @ query  # float32, deterministic
        n = min(n, self.db.size)
        if n < self.db.size:
            # keep every candidate tied with the n-th best, then tie-break
            part = np.argpartition(-sims, n - 1)[:n]
            threshold = sims[part].min()
            cand = np.nonzero(sims >= threshold)[0]
        else:
            cand = np.arange(self.db.size)
        order = cand[np.lexsort((self._id_rank[cand], -sims[cand]))][:n]
        hits = tuple(
            Hit(
                db_id=self.db.ids[i],
                similarity=float(sims[i]),
                geotag=self.db.geotags[i],
            )
            for i in order
        )
        return RankedList(query_id=query_id, hits=hits)


def build_index(db: DescriptorDb) -> SearchIndex:
    return SearchIndex(db)


def search(db: DescriptorDb, query: np.ndarray, n: int, query_id: str = "query") -> RankedList:
    return build_index(db).search(query, query_id, n)


def query_expand(
    query: np.ndarray, ranked: RankedList, db: DescriptorDb, cfg: QeConfig
) -> np.ndarray:
    """Average Query Expansion: unit-normalized blend of the query with the
    mean of its top-k retrieved descriptors."""
    if len(ranked.hits) < cfg.k:
        raise InsufficientHits(f"need {cfg.k} hits, ranked list has {len(ranked.hits)}")
    query = np.asarray(query, dtype=np.float64).reshape(-1)
    row_by_id = {db_id: i for i, db_id in enumerate(db.ids)}
    expanded = cfg.alpha_qe * query
    share = (1.0 - cfg.alpha_qe) / cfg.k
    for hit in ranked.hits[: cfg.k]:
        expanded = expanded + share * db.rows[row_by_id[hit.db_id]].astype(np.float64)
    return (expanded / np.linalg.norm(expanded)).astype(np.float32)


def run_retrieval(
    query_db: DescriptorDb,
    db: DescriptorDb,
    topn: int,
    qe: QeConfig | None = None,
    threads: int = 1,
) -> list[RankedList]:
    """Rank every query against the database; with QE enabled, a full second
    search is run with the expanded query."""
    index = build_index(db)
    if query_db.dim != db.dim:
        raise DimMismatch(f"query dim {query_db.dim} vs db dim {query_db.dim}")

    def one(i: int) -> RankedList:
        qid = query_db.ids[i]
        q = query_db.rows[i]
        first_pass_n = max(topn, qe.k) if qe is not None else topn
        ranked = index.search(q, qid, first_pass_n)
        if qe is not None:
            q2 = query_expand(q, ranked, db, qe)
            ranked = index.search(q2, qid, topn)
        elif first_pass_n != topn:
            ranked = RankedList(query_id=qid, hits=ranked.hits[:topn])
        return ranked

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(query_db.size)))
    return [one(i) for i in range(query_db.size)]


def write_results_jsonl(results: list[RankedList], path) -> None:
    lines = []
    for r in results:
        lines.append(
            json.dumps(
                {
                    "query_id": r.query_id,
                    "hits": [
                        {
                            "db_id": h.db_id,
                            "similarity": round(h.similarity, 6),
                            "lat": h.geotag.lat,
                            "lon": h.geotag.lon,
                        }
                        for h in r.hits
                    ],
                },
                separators=(",", ":"),
            )
        )
    from .tensor_io import _atomic_write

    _atomic_write(path, ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8"))


def read_results_jsonl(path) -> list[RankedList]:
    results = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        hits = tuple(
            Hit(db_id=h["db_id"], similarity=h["similarity"], geotag=GeoTag(h["lat"], h["lon"]))
            for h in obj["hits"]
        )
        results.append(RankedList(query_id=obj["query_id"], hits=hits))
    return results
