import json

import numpy as np
import pytest
from PIL import Image as PILImage

from crossview.cli import main
from crossview.index import read_rankings_jsonl
from crossview.synthetic import make_synthetic_dataset


def write_png(path, rgb, size=16, stripe=None):
    """Solid-color test image; optional brighter stripe in the top half."""
    arr = np.zeros((size, size, 3), dtype=np.uint8)
    arr[:, :] = rgb
    if stripe is not None:
        arr[: size // 2, :] = stripe
    path.parent.mkdir(parents=True, exist_ok=True)
    PILImage.fromarray(arr).save(path)


def build_image_dataset(root, n_locs=6):
    """Tiny on-disk dataset: per location one street, satellite, drone image
    sharing a distinctive color, plus manifests and a truth sidecar."""
    rng = np.random.default_rng(55)
    colors = rng.integers(40, 255, size=(n_locs, 3))
    locations = []
    truth = {}
    for i in range(n_locs):
        rgb = tuple(int(c) for c in colors[i])
        street = f"street/loc{i}.png"
        sat = f"satellite/loc{i}.png"
        drone = f"drone/loc{i}.png"
        write_png(root / street, rgb, stripe=tuple(min(255, c + 30) for c in rgb))
        write_png(root / sat, rgb)
        write_png(root / drone, rgb, stripe=tuple(max(0, c - 30) for c in rgb))
        locations.append(
            {"id": f"loc{i}", "street": [street], "satellite": [sat], "drone": [drone]}
        )
        truth[street] = sat
    for split, name in (("train", "train.json"), ("test", "test.json")):
        (root / name).write_text(
            json.dumps({"split": split, "locations": locations})
        )
    (root / "truth.json").write_text(json.dumps(truth))
    return root


class TestBasics:
    def test_version(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["--version"])
        assert info.value.code == 0
        out = capsys.readouterr().out
        assert "crossview 0.1.0" in out
        assert "embedding format v1" in out
        assert "model format v1" in out

    def test_unknown_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main(["frobnicate"])
        assert info.value.code == 2

    def test_no_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as info:
            main([])
        assert info.value.code == 2

    def test_eval_missing_truth_exits_3_and_names_path(self, tmp_path, capsys):
        rankings = tmp_path / "r.jsonl"
        rankings.write_text('{"query":"q","candidates":[{"id":"a","score":1.0}]}\n')
        missing = tmp_path / "no_truth.json"
        code = main(
            ["eval", "--rankings", str(rankings), "--truth", str(missing), "--ks", "1"]
        )
        assert code == 3
        assert "no_truth.json" in capsys.readouterr().err

    def test_bad_ks_value(self, tmp_path, capsys):
        rankings = tmp_path / "r.jsonl"
        rankings.write_text('{"query":"q","candidates":[]}\n')
        truth = tmp_path / "t.json"
        truth.write_text("{}")
        code = main(
            ["eval", "--rankings", str(rankings), "--truth", str(truth), "--ks", "1,x"]
        )
        assert code == 3


class TestImageWalkthrough:
    def test_embed_train_retrieve_rerank_eval(self, tmp_path, capsys):
        root = build_image_dataset(tmp_path / "data")
        work = tmp_path / "work"
        work.mkdir()

        for view, out_name in (
            ("street", "street.cvge"),
            ("satellite", "sat.cvge"),
            ("drone", "drone.cvge"),
        ):
            code = main(
                [
                    "embed",
                    "--manifest",
                    str(root / "test.json"),
                    "--view",
                    view,
                    "--grid",
                    "2",
                    "--out",
                    str(work / out_name),
                ]
            )
            assert code == 0
            assert (work / out_name).exists()

        code = main(
            [
                "train",
                "--manifest",
                str(root / "train.json"),
                "--street-emb",
                str(work / "street.cvge"),
                "--sat-emb",
                str(work / "sat.cvge"),
                "--drone-emb",
                str(work / "drone.cvge"),
                "--epochs",
                "5",
                "--batch",
                "6",
                "--lr",
                "0.01",
                "--d-out",
                "8",
                "--seed",
                "0",
                "--out",
                str(work / "model.cvgm"),
            ]
        )
        assert code == 0
        assert (work / "model.cvgm").exists()

        code = main(
            [
                "retrieve",
                "--model",
                str(work / "model.cvgm"),
                "--index",
                str(work / "sat.cvge"),
                "--queries",
                str(work / "street.cvge"),
                "--manifest",
                str(root / "test.json"),
                "--k",
                "6",
                "--out",
                str(work / "rankings.jsonl"),
            ]
        )
        assert code == 0
        rankings = read_rankings_jsonl(work / "rankings.jsonl")
        assert len(rankings) == 6

        code = main(
            [
                "rerank",
                "--rankings",
                str(work / "rankings.jsonl"),
                "--manifest",
                str(root / "test.json"),
                "--mock",
                "identity",
                "--k",
                "6",
                "--out",
                str(work / "reranked.jsonl"),
            ]
        )
        assert code == 0
        reranked = [
            json.loads(line)
            for line in (work / "reranked.jsonl").read_text().splitlines()
        ]
        assert all(obj["used_vlm"] for obj in reranked)

        capsys.readouterr()
        code = main(
            [
                "eval",
                "--rankings",
                str(work / "reranked.jsonl"),
                "--truth",
                str(root / "truth.json"),
                "--ks",
                "1,5",
                "--out",
                str(work / "report.json"),
            ]
        )
        assert code == 0
        out_lines = capsys.readouterr().out.splitlines()
        assert out_lines[0].startswith("R@1 ")
        assert out_lines[1].startswith("R@5 ")
        report = json.loads((work / "report.json").read_text())
        assert report["n_queries"] == 6


@pytest.fixture(scope="module")
def synthetic_on_disk(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth_cli")
    ds = make_synthetic_dataset(seed=11, n_locations=12, dim=48, noise=0.4)
    return ds.write(root)


class TestPipelineCommand:
    def test_pipeline_with_config_file(self, tmp_path, synthetic_on_disk, capsys):
        paths = synthetic_on_disk
        out_dir = tmp_path / "run"
        config = {
            "seed": 0,
            "paths": {
                "manifest": str(paths["test_manifest"]),
                "street_emb": str(paths["street_emb"]),
                "sat_emb": str(paths["sat_emb"]),
                "truth": str(paths["truth"]),
                "out_dir": str(out_dir),
            },
            "retrieve": {"k": 10},
            "rerank": {"k": 10, "model_name": "vlm-test"},
            "eval": {"ks": [1, 5, 10]},
        }
        config_path = tmp_path / "run.json"
        config_path.write_text(json.dumps(config))

        code = main(["pipeline", "--config", str(config_path), "--mock", "identity"])
        assert code == 0
        out = capsys.readouterr().out
        assert "retrieval" in out and "reranked" in out and "R@10" in out
        for name in (
            "rankings.jsonl",
            "reranked.jsonl",
            "report_pre.json",
            "report_post.json",
            "comparison.txt",
            "comparison.json",
        ):
            assert (out_dir / name).exists()

    def test_pipeline_matches_subcommand_chain(self, tmp_path, synthetic_on_disk):
        paths = synthetic_on_disk
        pipe_dir = tmp_path / "pipe"
        code = main(
            [
                "pipeline",
                "--manifest",
                str(paths["test_manifest"]),
                "--street-emb",
                str(paths["street_emb"]),
                "--sat-emb",
                str(paths["sat_emb"]),
                "--truth",
                str(paths["truth"]),
                "--out-dir",
                str(pipe_dir),
                "--k",
                "10",
                "--rerank-k",
                "10",
                "--ks",
                "1,5,10",
                "--mock",
                "identity",
            ]
        )
        assert code == 0

        step_dir = tmp_path / "steps"
        step_dir.mkdir()
        assert (
            main(
                [
                    "retrieve",
                    "--index",
                    str(paths["sat_emb"]),
                    "--queries",
                    str(paths["street_emb"]),
                    "--manifest",
                    str(paths["test_manifest"]),
                    "--k",
                    "10",
                    "--out",
                    str(step_dir / "rankings.jsonl"),
                ]
            )
            == 0
        )
        assert (
            main(
                [
                    "rerank",
                    "--rankings",
                    str(step_dir / "rankings.jsonl"),
                    "--manifest",
                    str(paths["test_manifest"]),
                    "--mock",
                    "identity",
                    "--truth",
                    str(paths["truth"]),
                    "--k",
                    "10",
                    "--out",
                    str(step_dir / "reranked.jsonl"),
                ]
            )
            == 0
        )
        for src, report_name in (
            ("rankings.jsonl", "report_pre.json"),
            ("reranked.jsonl", "report_post.json"),
        ):
            assert (
                main(
                    [
                        "eval",
                        "--rankings",
                        str(step_dir / src),
                        "--truth",
                        str(paths["truth"]),
                        "--ks",
                        "1,5,10",
                        "--out",
                        str(step_dir / report_name),
                    ]
                )
                == 0
            )

        for name in ("rankings.jsonl", "reranked.jsonl", "report_pre.json", "report_post.json"):
            assert (pipe_dir / name).read_bytes() == (step_dir / name).read_bytes(), name

    def test_pipeline_deterministic_across_runs(self, tmp_path, synthetic_on_disk):
        paths = synthetic_on_disk
        digests = []
        for run in ("a", "b"):
            out_dir = tmp_path / run
            code = main(
                [
                    "pipeline",
                    "--manifest",
                    str(paths["test_manifest"]),
                    "--street-emb",
                    str(paths["street_emb"]),
                    "--sat-emb",
                    str(paths["sat_emb"]),
                    "--truth",
                    str(paths["truth"]),
                    "--out-dir",
                    str(out_dir),
                    "--mock",
                    "identity",
                ]
            )
            assert code == 0
            digests.append(
                tuple(
                    (out_dir / n).read_bytes()
                    for n in ("rankings.jsonl", "reranked.jsonl", "comparison.txt")
                )
            )
        assert digests[0] == digests[1]


class TestConfigInteraction:
    def test_flags_override_config(self, tmp_path, synthetic_on_disk):
        paths = synthetic_on_disk
        config = {
            "paths": {
                "manifest": str(paths["test_manifest"]),
                "street_emb": str(paths["street_emb"]),
                "sat_emb": str(paths["sat_emb"]),
            },
            "retrieve": {"k": 10},
        }
        config_path = tmp_path / "cfg.json"
        config_path.write_text(json.dumps(config))
        out = tmp_path / "rankings.jsonl"
        code = main(
            ["retrieve", "--config", str(config_path), "--k", "3", "--out", str(out)]
        )
        assert code == 0
        for ranked in read_rankings_jsonl(out):
            assert len(ranked) == 3

    def test_toml_config(self, tmp_path, synthetic_on_disk):
        paths = synthetic_on_disk
        config_path = tmp_path / "cfg.toml"
        config_path.write_text(
            "\n".join(
                [
                    "[paths]",
                    f'manifest = "{paths["test_manifest"]}"',
                    f'street_emb = "{paths["street_emb"]}"',
                    f'sat_emb = "{paths["sat_emb"]}"',
                    "[retrieve]",
                    "k = 4",
                ]
            )
        )
        out = tmp_path / "rankings.jsonl"
        code = main(["retrieve", "--config", str(config_path), "--out", str(out)])
        assert code == 0
        for ranked in read_rankings_jsonl(out):
            assert len(ranked) == 4

    def test_missing_config_file(self, tmp_path, capsys):
        code = main(["retrieve", "--config", str(tmp_path / "absent.json"), "--out", "x"])
        assert code == 3

    def test_relative_paths_resolve_against_config_dir(self, tmp_path, synthetic_on_disk):
        paths = synthetic_on_disk
        base = paths["street_emb"].parent
        config_path = base / "local.json"
        config_path.write_text(
            json.dumps(
                {
                    "paths": {
                        "manifest": paths["test_manifest"].name,
                        "street_emb": paths["street_emb"].name,
                        "sat_emb": paths["sat_emb"].name,
                    }
                }
            )
        )
        out = tmp_path / "r.jsonl"
        code = main(["retrieve", "--config", str(config_path), "--k", "2", "--out", str(out)])
        assert code == 0


class TestTransportExit:
    def test_unreachable_endpoint_exits_4_with_fallback_file(self, tmp_path, capsys):
        rankings = tmp_path / "r.jsonl"
        rankings.write_text(
            '{"query":"q0","candidates":[{"id":"a","score":1.0},{"id":"b","score":0.5}]}\n'
        )
        out = tmp_path / "reranked.jsonl"
        code = main(
            [
                "rerank",
                "--rankings",
                str(rankings),
                "--endpoint",
                "http://127.0.0.1:9",
                "--timeout",
                "0.2",
                "--k",
                "2",
                "--out",
                str(out),
            ]
        )
        assert code == 4
        obj = json.loads(out.read_text().splitlines()[0])
        assert obj["used_vlm"] is False
        assert obj["failure"].startswith("transport")
        assert [c["id"] for c in obj["candidates"]] == ["a", "b"]
