"""Exact brute-force top-K cosine retrieval over a fixed reference set.

The index is an immutable id list plus a row-aligned matrix of unit
vectors; a query is scored against every row (float64 accumulation)
and the best K are selected with the same ordering a full sort would
produce: descending score, ties broken by ascending reference id.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .embedding import EmbeddingTable, l2_normalize
from .errors import DataError, DimMismatchError, EmptyTableError, ZeroVectorError


@dataclass
class RankedList:
    """One query's ordered candidates as (reference_id, cosine score)."""

    query_id: str
    entries: list[tuple[str, float]] = field(default_factory=list)

    def ids(self) -> list[str]:
        return [ref_id for ref_id, _ in self.entries]

    def __len__(self) -> int:
        return len(self.entries)


@dataclass
class RetrievalIndex:
    dim: int
    ids: list[str]
    matrix: np.ndarray  # (n, dim) float32, rows unit-norm, aligned with ids

    def __len__(self) -> int:
        return len(self.ids)


def build_index(table: EmbeddingTable) -> RetrievalIndex:
    """Normalize every table entry into a row of the reference matrix.

    Ids are held in ascending lexicographic order so equal-score ties
    resolve identically on every platform.
    """
    ids = sorted(table.ids())
    if not ids:
        raise EmptyTableError("cannot build an index from an empty embedding table")
    rows = np.empty((len(ids), table.dim), dtype=np.float32)
    for i, ref_id in enumerate(ids):
        vec = table[ref_id].astype(np.float64)
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            raise ZeroVectorError(f"reference {ref_id!r} is the zero vector")
        rows[i] = (vec / norm).astype(np.float32)
    return RetrievalIndex(dim=table.dim, ids=ids, matrix=rows)


def query_topk(index: RetrievalIndex, query: np.ndarray, k: int) -> RankedList:
    """Return the top min(k, n) references for one normalized query vector.

    Scores are exact float64 dot products against the stored rows. The
    result equals sorting all n scores by (-score, id) and truncating,
    including which members of a boundary tie survive the cut.
    """
    if k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise DimMismatchError(f"query dim {q.shape[0]} does not match index dim {index.dim}")

    scores = index.matrix.astype(np.float64) @ q
    n = scores.shape[0]
    k_eff = min(k, n)
    if k_eff < n:
        # Partial select may split a tie at the boundary arbitrarily, so
        # re-gather every row scoring at least the provisional cutoff and
        # let the id tie-break decide among them.
        part = np.argpartition(scores, n - k_eff)[n - k_eff :]
        cutoff = scores[part].min()
        candidates = np.flatnonzero(scores >= cutoff)
    else:
        candidates = np.arange(n)
    order = sorted(candidates, key=lambda i: (-scores[i], index.ids[i]))[:k_eff]
    return RankedList(
        query_id="", entries=[(index.ids[i], float(scores[i])) for i in order]
    )


def query_topk_batch(
    index: RetrievalIndex, queries: EmbeddingTable, k: int, query_ids=None
) -> list[RankedList]:
    """Run query_topk for each query id; results follow the given id order.

    ``query_ids`` defaults to the table's ascending id order. Each query
    vector is normalized before scoring (table entries are raw f32 and
    may carry rounding drift).
    """
    if query_ids is None:
        query_ids = queries.ids()
    results = []
    for query_id in query_ids:
        try:
            vec = queries[query_id]
        except KeyError:
            raise DataError(f"query id {query_id!r} not present in the query table")
        ranked = query_topk(index, l2_normalize(vec.astype(np.float64)), k)
        ranked.query_id = query_id
        results.append(ranked)
    return results


def ranking_to_obj(ranking: RankedList) -> dict:
    return {
        "query": ranking.query_id,
        "candidates": [
            {"id": ref_id, "score": score} for ref_id, score in ranking.entries
        ],
    }


def ranking_from_obj(obj) -> RankedList:
    """Parse one rankings-file record; unknown keys are ignored."""
    if not isinstance(obj, dict) or "query" not in obj or "candidates" not in obj:
        raise DataError("rankings record must be an object with 'query' and 'candidates'")
    query_id = obj["query"]
    if not isinstance(query_id, str):
        raise DataError("rankings 'query' must be a string")
    entries: list[tuple[str, float]] = []
    seen: set[str] = set()
    for cand in obj["candidates"]:
        if (
            not isinstance(cand, dict)
            or not isinstance(cand.get("id"), str)
            or not isinstance(cand.get("score"), (int, float))
            or isinstance(cand.get("score"), bool)
        ):
            raise DataError(f"malformed candidate record for query {query_id!r}")
        if cand["id"] in seen:
            raise DataError(f"duplicate candidate {cand['id']!r} for query {query_id!r}")
        seen.add(cand["id"])
        entries.append((cand["id"], float(cand["score"])))
    return RankedList(query_id=query_id, entries=entries)


def write_rankings_jsonl(rankings: list[RankedList], path) -> None:
    """One compact JSON object per line; byte-stable for identical inputs."""
    with open(path, "w", encoding="utf-8") as f:
        for ranking in rankings:
            f.write(json.dumps(ranking_to_obj(ranking), separators=(",", ":")))
            f.write("\n")


def read_rankings_jsonl(path) -> list[RankedList]:
    rankings = []
    try:
        f = open(path, encoding="utf-8")
    except FileNotFoundError:
        raise DataError(f"rankings file not found: {path}")
    with f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: invalid JSON: {exc}") from exc
            rankings.append(ranking_from_obj(obj))
    return rankings
