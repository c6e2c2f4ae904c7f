import numpy as np
import pytest

from attnvpr import errors
from attnvpr.aggregation import aggregate_set, load_profile
from attnvpr.fixtures import (
    RECALL_PLANT_EXPECTED,
    RECALL_PLANT_RANKS,
    RECOVERY_CORRECT_ID,
    RECOVERY_QUERY_ID,
    gen_fixture,
    plant_recall_fixture,
    plant_recovery_fixture,
)
from attnvpr.geo_eval import (
    EARTH_RADIUS_M,
    SWEEP_ALPHAS,
    EvalConfig,
    RecallReport,
    alpha_sweep,
    emit_report,
    haversine,
    parse_report_csv,
    recall_at_n,
    report_to_csv,
)
from attnvpr.retrieval import run_retrieval
from attnvpr.tensor_io import GeoTag, load_manifest


class TestHaversine:
    def test_equator_millidegree(self):
        d = haversine(GeoTag(0.0, 0.0), GeoTag(0.0, 0.001))
        assert d == pytest.approx(111.19492664, abs=1e-4)

    def test_zero_distance(self):
        assert haversine(GeoTag(37.0, -122.0), GeoTag(37.0, -122.0)) == 0.0

    def test_symmetric(self):
        a, b = GeoTag(51.5, -0.12), GeoTag(48.85, 2.35)
        assert haversine(a, b) == pytest.approx(haversine(b, a), abs=1e-9)

    def test_antipodal_is_half_circumference(self):
        d = haversine(GeoTag(0.0, 0.0), GeoTag(0.0, 180.0))
        assert d == pytest.approx(np.pi * EARTH_RADIUS_M, rel=1e-9)

    def test_triangle_inequality(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            pts = [GeoTag(float(rng.uniform(-80, 80)), float(rng.uniform(-179, 179)))
                   for _ in range(3)]
            a, b, c = pts
            assert haversine(a, c) <= haversine(a, b) + haversine(b, c) + 1e-6

    def test_london_paris_ballpark(self):
        d = haversine(GeoTag(51.5074, -0.1278), GeoTag(48.8566, 2.3522))
        assert 330_000 < d < 350_000


def _eval_fixture(root, qe=None, topn=10, alpha=0.0):
    profile = load_profile(root / "model.toml")
    queries = load_manifest(root / "query_manifest.csv")
    dbm = load_manifest(root / "db_manifest.csv")
    db = aggregate_set(dbm, root / "features", profile)
    qdb = aggregate_set(
        queries,
        root / "features",
        profile,
        attention_dir=(root / "attention") if alpha > 0 else None,
        alpha=alpha,
    )
    results = run_retrieval(qdb, db, topn=topn, qe=qe)
    return results, queries, db


class TestRecallAtN:
    def test_planted_ranks_give_60_80_90(self, tmp_path):
        root = plant_recall_fixture(tmp_path / "plant")
        results, queries, db = _eval_fixture(root, topn=15)
        report = recall_at_n(results, queries, EvalConfig(threshold_m=25.0),
                             db_geotags=db.geotags)
        assert report.recalls == RECALL_PLANT_EXPECTED
        ranks = dict(report.per_query)
        for i, planted in enumerate(RECALL_PLANT_RANKS):
            expected = planted if planted <= 15 else None
            assert ranks[f"q{i:02d}"] == expected
        assert report.unreachable_queries == 0

    def test_monotone_in_n(self, tmp_path):
        root = plant_recall_fixture(tmp_path / "plant")
        results, queries, _ = _eval_fixture(root, topn=15)
        report = recall_at_n(results, queries, EvalConfig(ns=(1, 2, 3, 5, 8, 10, 15)))
        vals = [report.recalls[n] for n in (1, 2, 3, 5, 8, 10, 15)]
        assert vals == sorted(vals)

    def test_monotone_in_threshold(self, tmp_path):
        root = plant_recall_fixture(tmp_path / "plant")
        results, queries, _ = _eval_fixture(root, topn=15)
        tight = recall_at_n(results, queries, EvalConfig(threshold_m=25.0))
        loose = recall_at_n(results, queries, EvalConfig(threshold_m=100.0))
        for n in tight.recalls:
            assert loose.recalls[n] >= tight.recalls[n]

    def test_missing_ground_truth(self, tmp_path):
        root = plant_recall_fixture(tmp_path / "plant")
        results, _, _ = _eval_fixture(root, topn=3)
        dbm = load_manifest(root / "db_manifest.csv")  # wrong manifest: no query ids
        with pytest.raises(errors.MissingGroundTruth):
            recall_at_n(results, dbm, EvalConfig())

    def test_empty_results_zero_recall(self, tmp_path):
        root = plant_recall_fixture(tmp_path / "plant")
        queries = load_manifest(root / "query_manifest.csv")
        report = recall_at_n([], queries, EvalConfig())
        assert set(report.recalls.values()) == {0.0}

    def test_decreasing_recall_rejected(self):
        with pytest.raises(ValueError):
            RecallReport("q", 0.0, 25.0, {1: 80.0, 5: 60.0}, [])


class TestSweep:
    def test_lattice_values(self):
        assert SWEEP_ALPHAS == (0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

    def test_recovery_flip(self, tmp_path):
        root = plant_recovery_fixture(tmp_path / "rec")
        profile = load_profile(root / "model.toml")
        queries = load_manifest(root / "query_manifest.csv")
        dbm = load_manifest(root / "db_manifest.csv")
        db = aggregate_set(dbm, root / "features", profile)
        sweep = alpha_sweep(
            root / "features", root / "attention", db, queries, profile,
            EvalConfig(ns=(1,)), alphas=(0.0, 1.0), topn=1,
        )
        by_alpha = dict(sweep.grid)
        assert by_alpha[0.0].recalls[1] == 0.0
        assert by_alpha[1.0].recalls[1] == 100.0
        # at alpha=1 the first hit is the planted correct entry
        results, _, _ = _eval_fixture(root, topn=1, alpha=1.0)
        assert results[0].query_id == RECOVERY_QUERY_ID
        assert results[0].hits[0].db_id == RECOVERY_CORRECT_ID

    def test_alpha_zero_reproduces_baseline(self, tmp_path):
        root = gen_fixture(seed=11, n_db=6, n_queries=6, out_dir=tmp_path / "fx")
        profile = load_profile(root / "model.toml")
        queries = load_manifest(root / "query_manifest.csv")
        dbm = load_manifest(root / "db_manifest.csv")
        db = aggregate_set(dbm, root / "features", profile)
        baseline = aggregate_set(queries, root / "features", profile)
        swept = aggregate_set(queries, root / "features", profile,
                              attention_dir=root / "attention", alpha=0.0)
        assert swept.rows.tobytes() == baseline.rows.tobytes()


class TestReports:
    def _report(self):
        return RecallReport("queries", 0.3, 25.0, {1: 60.0, 5: 80.0, 10: 90.1234},
                            [("q0", 1), ("q1", None)])

    def test_csv_round_trip(self):
        rows = parse_report_csv(report_to_csv(self._report()))
        assert rows[0] == (0.3, 1, 60.0)
        assert rows[2][2] == pytest.approx(90.1234, abs=1e-4)

    def test_csv_header_enforced(self):
        with pytest.raises(errors.IoFailure):
            parse_report_csv("nope\n1,2,3\n")

    def test_emit_writes_all_formats(self, tmp_path):
        paths = emit_report(self._report(), tmp_path, stem="rep")
        names = sorted(p.name for p in paths)
        assert names == ["rep.csv", "rep.json", "rep.png"]
        for p in paths:
            assert p.stat().st_size > 0

    def test_zero_query_warning(self, tmp_path):
        empty = RecallReport("queries", 0.0, 25.0, {1: 0.0}, [])
        with pytest.warns(UserWarning, match="0 queries"):
            emit_report(empty, tmp_path, formats=("csv",))
