"""Recall@K scoring, run comparison tables, and the end-to-end pipeline.

Recall is exact counting: a query scores at K iff the true reference
sits at 1-based rank <= K in its candidate list; absent means failure
at every K. The pipeline chains embed -> retrieve -> rerank -> recall
over one config and leaves every intermediate artifact on disk, byte
stable for deterministic re-rank modes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .config import PipelineConfig
from .dataset import Manifest, load_manifest
from .embedding import (
    EmbeddingTable,
    load_image,
    read_embeddings,
    toy_embed,
    write_embeddings,
)
from .errors import DataError, KMismatchError, MissingEmbeddingError, MissingTruthError
from .index import RankedList, build_index, query_topk_batch, write_rankings_jsonl
from .mock_vlm import MockVlmServer
from .rerank import VlmClient, jobs_from_rankings, rerank_batch, write_outcomes_jsonl
from .trainer import load_model, project_table


def load_truth(path) -> dict[str, str]:
    """Read a truth file: JSON object mapping query id to reference id."""
    path = Path(path)
    if not path.is_file():
        raise DataError(f"truth file not found: {path}")
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}")
    if not isinstance(data, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in data.items()
    ):
        raise DataError(f"{path}: truth must map query-id strings to reference-id strings")
    return data


def save_truth(truth: dict[str, str], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(truth, f, indent=2, sort_keys=True)
        f.write("\n")


def derive_truth(manifest: Manifest) -> dict[str, str]:
    """Ground truth straight from the manifest: each street query's true
    reference is its own location's primary satellite image."""
    truth: dict[str, str] = {}
    for loc in manifest.locations:
        if not loc.satellite:
            continue
        for street_ref in loc.street:
            truth[street_ref] = loc.satellite[0]
    return truth


@dataclass
class RecallReport:
    n_queries: int
    recall: dict[int, float]  # K -> fraction in [0, 1]
    per_query: dict[str, int | None] = field(default_factory=dict)  # rank or not-found

    def to_obj(self) -> dict:
        return {
            "n_queries": self.n_queries,
            "recall": {str(k): v for k, v in self.recall.items()},
            "per_query": dict(self.per_query),
        }


def recall_at_k(
    rankings: list[RankedList], truth: dict[str, str], ks: list[int]
) -> RecallReport:
    """Exact Recall@K over a batch of ranked lists.

    Each query counts once; its rank is the 1-based position of the true
    reference in the candidate list, or None when absent.
    """
    if any(k < 1 for k in ks):
        raise ValueError(f"ks must be positive integers, got {ks}")
    per_query: dict[str, int | None] = {}
    for ranking in rankings:
        if ranking.query_id not in truth:
            raise MissingTruthError(f"no ground truth for query {ranking.query_id!r}")
        true_ref = truth[ranking.query_id]
        rank = None
        for pos, (ref_id, _) in enumerate(ranking.entries, start=1):
            if ref_id == true_ref:
                rank = pos
                break
        per_query[ranking.query_id] = rank
    n = len(rankings)
    recall = {
        k: (sum(1 for r in per_query.values() if r is not None and r <= k) / n if n else 0.0)
        for k in ks
    }
    return RecallReport(n_queries=n, recall=recall, per_query=per_query)


def percent(fraction: float) -> str:
    """Render a recall fraction as a two-decimal percentage: 0.3021 -> 30.21."""
    return f"{100.0 * fraction:.2f}"


def compare_runs(reports: list[tuple[str, RecallReport]]) -> tuple[str, dict]:
    """Render named reports side by side; returns (text table, machine obj).

    All reports must share the same K set.
    """
    if not reports:
        raise ValueError("need at least one report to compare")
    ks = sorted(reports[0][1].recall)
    for name, report in reports[1:]:
        if sorted(report.recall) != ks:
            raise KMismatchError(f"run {name!r} reports different K values")

    name_width = max(len("run"), *(len(name) for name, _ in reports))
    header = "run".ljust(name_width) + "".join(f"  R@{k}".rjust(9) for k in ks)
    lines = [header]
    rows = []
    for name, report in reports:
        cells = {str(k): percent(report.recall[k]) for k in ks}
        rows.append({"name": name, "recall_pct": cells})
        lines.append(
            name.ljust(name_width) + "".join(cells[str(k)].rjust(9) for k in ks)
        )
    text = "\n".join(lines) + "\n"
    return text, {"ks": ks, "runs": rows}


def write_report(report: RecallReport, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report.to_obj(), f, indent=2, sort_keys=True)
        f.write("\n")


def _ensure_view_table(
    manifest: Manifest, view: str, emb_path: Path | None, grid: int, out_dir: Path
) -> EmbeddingTable:
    """Load a view's embedding table, or toy-embed the images to create it.

    A missing table file is only an error when the manifest's images are
    not on disk either.
    """
    if emb_path is not None and emb_path.is_file():
        return read_embeddings(emb_path)
    refs = manifest.image_refs(view)
    if not refs:
        return EmbeddingTable({}, dim=3 * grid * grid)
    entries = {}
    for ref in refs:
        img_path = manifest.resolve(ref)
        if not img_path.is_file():
            raise DataError(
                f"no embeddings at {emb_path} and image {img_path} does not exist"
            )
        entries[ref] = toy_embed(load_image(img_path), grid=grid)
    table = EmbeddingTable(entries)
    target = emb_path if emb_path is not None else out_dir / f"{view}.cvge"
    write_embeddings(table, target)
    return table


def run_pipeline(config: PipelineConfig):
    """Execute embed -> retrieve -> rerank -> recall for one config.

    Artifacts written under config.out_dir: rankings.jsonl,
    reranked.jsonl, truth.json (when derived), report_pre.json,
    report_post.json, comparison.txt, comparison.json. Returns the
    (pre-rerank, post-rerank) report pair.
    """
    config.validate()
    manifest = load_manifest(config.manifest)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    street = _ensure_view_table(
        manifest, "street", config.street_emb, config.embed_grid, out_dir
    )
    satellite = _ensure_view_table(
        manifest, "satellite", config.sat_emb, config.embed_grid, out_dir
    )

    if config.model is not None:
        if not Path(config.model).is_file():
            raise DataError(f"model checkpoint not found: {config.model}")
        model = load_model(config.model)
        street = project_table(model.street_head, street)
        satellite = project_table(model.sat_head, satellite)

    query_ids = manifest.image_refs("street")
    for ref in query_ids:
        if ref not in street:
            raise MissingEmbeddingError(f"street image {ref!r} has no embedding")

    index = build_index(satellite)
    rankings = query_topk_batch(index, street, config.k, query_ids=query_ids)
    write_rankings_jsonl(rankings, out_dir / "rankings.jsonl")

    if config.truth is not None:
        truth = load_truth(config.truth)
    else:
        truth = derive_truth(manifest)
        save_truth(truth, out_dir / "truth.json")

    server = None
    endpoint = config.endpoint
    try:
        if config.mock_mode is not None:
            server = MockVlmServer(mode=config.mock_mode, truth=truth).start()
            endpoint = server.endpoint
        if endpoint is None:
            raise DataError("rerank stage needs an endpoint or a mock mode")
        client = VlmClient(
            endpoint, config.model_name, timeout=config.timeout, retries=config.retries
        )
        jobs = jobs_from_rankings(rankings, manifest.root, k=config.rerank_k)
        outcomes = rerank_batch(client, jobs, k=config.rerank_k, concurrency=config.concurrency)
    finally:
        if server is not None:
            server.stop()
    write_outcomes_jsonl(outcomes, out_dir / "reranked.jsonl")

    pre = recall_at_k(rankings, truth, config.ks)
    post = recall_at_k([o.final for o in outcomes], truth, config.ks)
    write_report(pre, out_dir / "report_pre.json")
    write_report(post, out_dir / "report_post.json")
    text, obj = compare_runs([("retrieval", pre), ("reranked", post)])
    (out_dir / "comparison.txt").write_text(text, encoding="utf-8")
    with open(out_dir / "comparison.json", "w", encoding="utf-8") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")
    return pre, post
