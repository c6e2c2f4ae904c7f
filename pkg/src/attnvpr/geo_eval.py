"""Geodesic ground-truth matching, Recall@N, alpha sweeps, and reports."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .aggregation import ModelProfile, aggregate_set
from .attention import RbfConfig
from .errors import IoFailure, MissingGroundTruth
from .retrieval import RankedList, run_retrieval
from .tensor_io import DescriptorDb, GeoTag, Manifest, _atomic_write

EARTH_RADIUS_M = 6_371_000.0

SWEEP_ALPHAS = tuple(round(i / 10, 1) for i in range(11))


def haversine(a: GeoTag, b: GeoTag) -> float:
    """Great-circle distance in meters on a spherical earth."""
    lat1, lon1, lat2, lon2 = map(math.radians, (a.lat, a.lon, b.lat, b.lon))
    dlat = lat2 - lat1
    dlon = lon2 - lon1
    h = math.sin(dlat / 2) ** 2 + math.cos(lat1) * math.cos(lat2) * math.sin(dlon / 2) ** 2
    return 2.0 * EARTH_RADIUS_M * math.asin(min(1.0, math.sqrt(h)))


@dataclass(frozen=True)
class EvalConfig:
    threshold_m: float = 25.0
    ns: tuple[int, ...] = (1, 5, 10)

    def __post_init__(self):
        if self.threshold_m <= 0:
            raise ValueError("threshold_m must be positive")
        if list(self.ns) != sorted(self.ns) or min(self.ns, default=1) < 1:
            raise ValueError("Ns must be ascending positive counts")


@dataclass
class RecallReport:
    query_set: str
    alpha: float
    threshold_m: float
    recalls: dict[int, float]  # N -> percentage
    per_query: list[tuple[str, int | None]]  # (query_id, first correct rank or None)
    unreachable_queries: int | None = None  # queries with zero in-range db entries

    def __post_init__(self):
        prev = -1.0
        for n in sorted(self.recalls):
            if self.recalls[n] < prev - 1e-9:
                raise ValueError("Recall@N must be non-decreasing in N")
            prev = self.recalls[n]


@dataclass
class SweepReport:
    query_set: str
    threshold_m: float
    grid: list[tuple[float, RecallReport]] = field(default_factory=list)


def recall_at_n(
    results: list[RankedList],
    gt: Manifest,
    cfg: EvalConfig,
    query_set: str = "queries",
    alpha: float = 0.0,
    db_geotags: list[GeoTag] | None = None,
) -> RecallReport:
    """A query is recalled at N iff any of its top-N hits lies within
    threshold_m of the query's own geotag. Queries with no in-range database
    entry count as misses (reported separately when db geotags are given)."""
    per_query: list[tuple[str, int | None]] = []
    for ranked in results:
        if ranked.query_id not in gt:
            raise MissingGroundTruth(f"no ground truth for query {ranked.query_id!r}")
        truth = gt.get(ranked.query_id).geotag
        first_rank = None
        for rank, hit in enumerate(ranked.hits, start=1):
            if haversine(truth, hit.geotag) <= cfg.threshold_m:
                first_rank = rank
                break
        per_query.append((ranked.query_id, first_rank))

    total = len(per_query)
    recalls = {}
    for n in cfg.ns:
        if total == 0:
            recalls[n] = 0.0
        else:
            hit_count = sum(1 for _, r in per_query if r is not None and r <= n)
            recalls[n] = 100.0 * hit_count / total

    unreachable = None
    if db_geotags is not None:
        unreachable = 0
        for ranked in results:
            truth = gt.get(ranked.query_id).geotag
            if not any(haversine(truth, g) <= cfg.threshold_m for g in db_geotags):
                unreachable += 1

    return RecallReport(
        query_set=query_set,
        alpha=alpha,
        threshold_m=cfg.threshold_m,
        recalls=recalls,
        per_query=per_query,
        unreachable_queries=unreachable,
    )


def alpha_sweep(
    features_dir,
    attention_dir,
    db: DescriptorDb,
    query_manifest: Manifest,
    profile: ModelProfile,
    cfg: EvalConfig,
    alphas: tuple[float, ...] = SWEEP_ALPHAS,
    topn: int = 10,
    rbf: RbfConfig = RbfConfig(),
    threads: int = 1,
    query_set: str = "queries",
) -> SweepReport:
    """Aggregate + retrieve + evaluate for each alpha on the lattice.

    Database descriptors stay fixed; only query descriptors are re-blended
    (asymmetric enhancement). alpha = 0 reproduces the attention-free
    baseline exactly.
    """
    sweep = SweepReport(query_set=query_set, threshold_m=cfg.threshold_m)
    for alpha in alphas:
        qdb = aggregate_set(
            query_manifest,
            features_dir,
            profile,
            attention_dir=attention_dir if alpha > 0 else None,
            alpha=alpha,
            rbf=rbf,
            threads=threads,
        )
        results = run_retrieval(qdb, db, topn=topn, threads=threads)
        report = recall_at_n(results, query_manifest, cfg, query_set=query_set, alpha=alpha)
        sweep.grid.append((alpha, report))
    return sweep


# --- report emission ---

def _report_rows(report: RecallReport | SweepReport) -> list[tuple[float, int, float]]:
    if isinstance(report, RecallReport):
        return [(report.alpha, n, report.recalls[n]) for n in sorted(report.recalls)]
    rows = []
    for alpha, rep in report.grid:
        rows.extend((alpha, n, rep.recalls[n]) for n in sorted(rep.recalls))
    return rows


def report_to_csv(report: RecallReport | SweepReport) -> str:
    lines = ["alpha,N,recall_pct"]
    for alpha, n, pct in _report_rows(report):
        lines.append(f"{alpha:.1f},{n},{pct:.4f}")
    return "\n".join(lines) + "\n"


def report_to_json(report: RecallReport | SweepReport) -> str:
    def recall_dict(rep: RecallReport) -> dict:
        return {
            "query_set": rep.query_set,
            "alpha": rep.alpha,
            "threshold_m": rep.threshold_m,
            "recalls": {str(n): round(rep.recalls[n], 4) for n in sorted(rep.recalls)},
            "per_query": [
                {"query_id": qid, "first_correct_rank": rank} for qid, rank in rep.per_query
            ],
            "unreachable_queries": rep.unreachable_queries,
        }

    if isinstance(report, RecallReport):
        payload = recall_dict(report)
    else:
        payload = {
            "query_set": report.query_set,
            "threshold_m": report.threshold_m,
            "grid": [
                {"alpha": alpha, "report": recall_dict(rep)} for alpha, rep in report.grid
            ],
        }
    return json.dumps(payload, indent=2, sort_keys=False) + "\n"


def parse_report_csv(text: str) -> list[tuple[float, int, float]]:
    rows = []
    lines = text.strip().splitlines()
    if not lines or lines[0] != "alpha,N,recall_pct":
        raise IoFailure("report CSV must start with header alpha,N,recall_pct")
    for line in lines[1:]:
        alpha, n, pct = line.split(",")
        rows.append((float(alpha), int(n), float(pct)))
    return rows


def emit_report(report: RecallReport | SweepReport, out_dir, stem: str = "report", formats=("csv", "json", "plot")) -> list[Path]:
    """Write the report as CSV / JSON / recall-vs-alpha plot image."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if isinstance(report, RecallReport) and not report.per_query:
        import warnings

        warnings.warn(f"report {stem!r} covers 0 queries", stacklevel=2)
    written = []
    if "csv" in formats:
        path = out_dir / f"{stem}.csv"
        _atomic_write(path, report_to_csv(report).encode("utf-8"))
        written.append(path)
    if "json" in formats:
        path = out_dir / f"{stem}.json"
        _atomic_write(path, report_to_json(report).encode("utf-8"))
        written.append(path)
    if "plot" in formats:
        written.append(_plot_report(report, out_dir / f"{stem}.png"))
    return written


def _plot_report(report: RecallReport | SweepReport, path: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    rows = _report_rows(report)
    ns = sorted({n for _, n, _ in rows})
    fig, ax = plt.subplots(figsize=(6, 4))
    for n in ns:
        pts = [(alpha, pct) for alpha, nn, pct in rows if nn == n]
        ax.plot([a for a, _ in pts], [p for _, p in pts], marker="o", label=f"Recall@{n}")
    ax.set_xlabel("attention blend alpha")
    ax.set_ylabel("recall (%)")
    ax.set_ylim(-2, 102)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=100)
    plt.close(fig)
    return path
