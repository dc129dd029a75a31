"""Exact top-K retrieval and the Recall@K scoring it feeds.

Uses a noisy synthetic dataset so the ranked lists show a realistic
mix of hits at different depths.
"""

from crossview.evaluation import compare_runs, percent, recall_at_k
from crossview.index import build_index, query_topk_batch
from crossview.synthetic import make_synthetic_dataset

ds = make_synthetic_dataset(seed=3, n_locations=20, dim=64, noise=0.5)
index = build_index(ds.satellite)
query_ids = sorted(ds.truth)

rankings = query_topk_batch(index, ds.street, k=10, query_ids=query_ids)

print("first three ranked lists (true reference marked *):")
for ranking in rankings[:3]:
    true_ref = ds.truth[ranking.query_id]
    print(f"\n  query {ranking.query_id}")
    for pos, (ref_id, score) in enumerate(ranking.entries[:5], start=1):
        marker = " *" if ref_id == true_ref else ""
        print(f"    {pos}. {ref_id:18s} {score:+.4f}{marker}")

report = recall_at_k(rankings, ds.truth, [1, 5, 10])
print(f"\nover {report.n_queries} queries:")
for k in (1, 5, 10):
    print(f"  R@{k:<2d} {percent(report.recall[k])}%")

# ranked-depth histogram: where does the truth land?
depths = {}
for rank in report.per_query.values():
    key = "miss" if rank is None else str(rank)
    depths[key] = depths.get(key, 0) + 1
print("\nrank histogram:", dict(sorted(depths.items(), key=lambda kv: (kv[0] == "miss", kv[0].zfill(3)))))

text, _ = compare_runs([("raw embeddings", report)])
print("\n" + text)
