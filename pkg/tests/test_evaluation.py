import json

import numpy as np
import pytest

from crossview.config import PipelineConfig
from crossview.dataset import LocationRecord, Manifest
from crossview.errors import DataError, KMismatchError, MissingTruthError
from crossview.evaluation import (
    RecallReport,
    compare_runs,
    derive_truth,
    load_truth,
    percent,
    recall_at_k,
    run_pipeline,
    save_truth,
    write_report,
)
from crossview.index import RankedList, read_rankings_jsonl
from crossview.synthetic import make_synthetic_dataset


def ranked(query_id, ids):
    return RankedList(query_id, [(rid, 1.0 - 0.01 * i) for i, rid in enumerate(ids)])


class TestRecallAtK:
    def test_rank_one_everywhere(self):
        rankings = [ranked(f"q{i}", [f"t{i}", "x", "y"]) for i in range(4)]
        truth = {f"q{i}": f"t{i}" for i in range(4)}
        report = recall_at_k(rankings, truth, [1, 5, 10])
        assert report.recall == {1: 1.0, 5: 1.0, 10: 1.0}
        assert report.n_queries == 4

    def test_rank_seven(self):
        ids = [f"c{i}" for i in range(10)]
        rankings = [ranked("q", ids)]
        report = recall_at_k(rankings, {"q": "c6"}, [1, 5, 10])
        assert report.recall == {1: 0.0, 5: 0.0, 10: 1.0}
        assert report.per_query["q"] == 7

    def test_mixed_ranks(self):
        # ranks 1, 3, 7, 12 -> R@1 = 0.25, R@5 = 0.50, R@10 = 0.75
        rankings = []
        truth = {}
        for i, rank in enumerate((1, 3, 7, 12)):
            ids = [f"f{i}_{j}" for j in range(15)]
            ids[rank - 1] = f"true{i}"
            rankings.append(ranked(f"q{i}", ids))
            truth[f"q{i}"] = f"true{i}"
        report = recall_at_k(rankings, truth, [1, 5, 10])
        assert report.recall == {1: 0.25, 5: 0.50, 10: 0.75}

    def test_truth_absent_from_list(self):
        report = recall_at_k([ranked("q", ["a", "b"])], {"q": "zzz"}, [1, 10])
        assert report.per_query["q"] is None
        assert report.recall == {1: 0.0, 10: 0.0}

    def test_missing_truth_entry(self):
        with pytest.raises(MissingTruthError):
            recall_at_k([ranked("q", ["a"])], {}, [1])

    def test_monotone_in_k(self):
        rng = np.random.default_rng(41)
        rankings = []
        truth = {}
        for i in range(30):
            ids = [f"r{i}_{j}" for j in range(20)]
            pos = int(rng.integers(20))
            ids[pos] = f"true{i}"
            truth[f"q{i}"] = f"true{i}"
            rankings.append(ranked(f"q{i}", ids))
        report = recall_at_k(rankings, truth, list(range(1, 21)))
        values = [report.recall[k] for k in range(1, 21)]
        assert values == sorted(values)
        assert values[-1] == 1.0

    def test_exact_recount(self):
        rng = np.random.default_rng(42)
        rankings = []
        truth = {}
        for i in range(50):
            ids = [f"r{i}_{j}" for j in range(12)]
            pos = int(rng.integers(14))  # sometimes beyond the list
            if pos < 12:
                ids[pos] = f"true{i}"
            truth[f"q{i}"] = f"true{i}"
            rankings.append(ranked(f"q{i}", ids))
        report = recall_at_k(rankings, truth, [5])
        manual = sum(
            1 for r in rankings if truth[r.query_id] in [rid for rid, _ in r.entries[:5]]
        )
        assert report.recall[5] == manual / 50

    def test_k_validation(self):
        with pytest.raises(ValueError):
            recall_at_k([], {}, [0])

    def test_empty_batch(self):
        report = recall_at_k([], {}, [1, 5])
        assert report.n_queries == 0
        assert report.recall == {1: 0.0, 5: 0.0}


class TestPercent:
    def test_formatting(self):
        assert percent(0.30212) == "30.21"
        assert percent(1.0) == "100.00"
        assert percent(0.0) == "0.00"
        assert percent(0.625) == "62.50"


class TestCompareRuns:
    def make_report(self, values):
        return RecallReport(n_queries=8, recall=values)

    def test_two_runs(self):
        pre = self.make_report({1: 0.25, 5: 0.5, 10: 0.75})
        post = self.make_report({1: 0.5, 5: 0.625, 10: 0.75})
        text, obj = compare_runs([("pre", pre), ("post", post)])
        lines = text.splitlines()
        assert lines[0].startswith("run")
        assert "R@1" in lines[0] and "R@10" in lines[0]
        assert lines[1].startswith("pre")
        assert "25.00" in lines[1] and "75.00" in lines[1]
        assert obj["ks"] == [1, 5, 10]
        assert obj["runs"][1] == {
            "name": "post",
            "recall_pct": {"1": "50.00", "5": "62.50", "10": "75.00"},
        }

    def test_r10_invariance_shows_equal_cells(self):
        pre = self.make_report({10: 0.75})
        post = self.make_report({10: 0.75})
        text, obj = compare_runs([("pre", pre), ("post", post)])
        assert obj["runs"][0]["recall_pct"]["10"] == obj["runs"][1]["recall_pct"]["10"]

    def test_single_run(self):
        text, obj = compare_runs([("only", self.make_report({1: 1.0}))])
        assert len(obj["runs"]) == 1

    def test_k_mismatch(self):
        with pytest.raises(KMismatchError):
            compare_runs(
                [("a", self.make_report({1: 0.5})), ("b", self.make_report({5: 0.5}))]
            )

    def test_deterministic_text(self):
        reports = [("pre", self.make_report({1: 0.1, 10: 0.9}))]
        assert compare_runs(reports)[0] == compare_runs(reports)[0]

    def test_empty(self):
        with pytest.raises(ValueError):
            compare_runs([])


class TestTruthFiles:
    def test_round_trip(self, tmp_path):
        truth = {"street/a": "sat/1", "street/b": "sat/2"}
        path = tmp_path / "truth.json"
        save_truth(truth, path)
        assert load_truth(path) == truth

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(DataError, match="truth.json"):
            load_truth(tmp_path / "truth.json")

    def test_malformed_json(self, tmp_path):
        path = tmp_path / "t.json"
        path.write_text("{broken")
        with pytest.raises(DataError):
            load_truth(path)

    def test_non_string_values(self, tmp_path):
        path = tmp_path / "t.json"
        path.write_text(json.dumps({"q": 3}))
        with pytest.raises(DataError):
            load_truth(path)

    def test_derive_truth_maps_street_to_first_satellite(self):
        manifest = Manifest(
            split="test",
            locations=(
                LocationRecord("loc0", street=("s/a", "s/b"), satellite=("r/0", "r/alt"), drone=()),
                LocationRecord("loc1", street=("s/c",), satellite=(), drone=()),
            ),
        )
        truth = derive_truth(manifest)
        assert truth == {"s/a": "r/0", "s/b": "r/0"}


class TestWriteReport:
    def test_json_shape(self, tmp_path):
        report = RecallReport(n_queries=2, recall={1: 0.5, 10: 1.0}, per_query={"q": 1, "p": None})
        path = tmp_path / "report.json"
        write_report(report, path)
        obj = json.loads(path.read_text())
        assert obj["n_queries"] == 2
        assert obj["recall"] == {"1": 0.5, "10": 1.0}
        assert obj["per_query"] == {"q": 1, "p": None}

    def test_byte_stable(self, tmp_path):
        report = RecallReport(n_queries=1, recall={5: 0.2}, per_query={"q": 3})
        a, b = tmp_path / "a.json", tmp_path / "b.json"
        write_report(report, a)
        write_report(report, b)
        assert a.read_bytes() == b.read_bytes()


def pipeline_config(tmp_path, ds_paths, mode, seed=0, k=10, rerank_k=10):
    return PipelineConfig(
        manifest=ds_paths["test_manifest"],
        street_emb=ds_paths["street_emb"],
        sat_emb=ds_paths["sat_emb"],
        truth=ds_paths["truth"],
        out_dir=tmp_path / f"out_{mode}",
        k=k,
        ks=[1, 5, 10],
        rerank_k=rerank_k,
        mock_mode=mode,
        model_name="vlm-test",
        seed=seed,
    )


@pytest.fixture(scope="module")
def noisy_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("noisy_ds")
    ds = make_synthetic_dataset(seed=3, n_locations=16, dim=64, noise=0.5)
    paths = ds.write(root)
    return paths


class TestRunPipeline:
    def test_identity_mode_pre_equals_post(self, tmp_path, noisy_dataset):
        config = pipeline_config(tmp_path, noisy_dataset, "identity")
        pre, post = run_pipeline(config)
        assert pre.recall == post.recall
        assert pre.per_query == post.per_query
        out = config.out_dir
        for name in (
            "rankings.jsonl",
            "reranked.jsonl",
            "report_pre.json",
            "report_post.json",
            "comparison.txt",
            "comparison.json",
        ):
            assert (out / name).exists()

    def test_oracle_mode_lifts_r1_to_pre_r10(self, tmp_path, noisy_dataset):
        config = pipeline_config(tmp_path, noisy_dataset, "oracle")
        pre, post = run_pipeline(config)
        assert post.recall[1] == pre.recall[10]
        assert post.recall[10] == pre.recall[10]

    def test_reverse_mode_preserves_r10(self, tmp_path, noisy_dataset):
        config = pipeline_config(tmp_path, noisy_dataset, "reverse")
        pre, post = run_pipeline(config)
        assert post.recall[10] == pre.recall[10]

    def test_garbage_mode_falls_back_everywhere(self, tmp_path, noisy_dataset):
        config = pipeline_config(tmp_path, noisy_dataset, "garbage")
        pre, post = run_pipeline(config)
        assert pre.recall == post.recall
        reranked = read_rankings_jsonl(config.out_dir / "reranked.jsonl")
        originals = read_rankings_jsonl(config.out_dir / "rankings.jsonl")
        assert [r.entries for r in reranked] == [r.entries for r in originals]

    def test_truth_derived_when_not_given(self, tmp_path, noisy_dataset):
        config = pipeline_config(tmp_path, noisy_dataset, "identity")
        config.truth = None
        run_pipeline(config)
        derived = json.loads((config.out_dir / "truth.json").read_text())
        stated = json.loads(noisy_dataset["truth"].read_text())
        assert derived == stated

    def test_missing_manifest(self, tmp_path):
        config = PipelineConfig(manifest=tmp_path / "absent.json", out_dir=tmp_path / "o")
        with pytest.raises(DataError):
            run_pipeline(config)

    def test_validation_k_covers_ks(self, tmp_path, noisy_dataset):
        config = pipeline_config(tmp_path, noisy_dataset, "identity", k=5)
        with pytest.raises(DataError):
            config.validate()
