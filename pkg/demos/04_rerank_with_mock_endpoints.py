"""Exercise the re-rank client against every mock endpoint mode.

The driver never drops a query: a healthy endpoint permutes the head of
the ranked list, and every failure mode degrades to the original order
with the failure recorded.
"""

from crossview.evaluation import recall_at_k
from crossview.index import build_index, query_topk_batch
from crossview.mock_vlm import MODES, MockVlmServer
from crossview.rerank import VlmClient, jobs_from_rankings, rerank_batch
from crossview.synthetic import make_synthetic_dataset

ds = make_synthetic_dataset(seed=5, n_locations=15, dim=48, noise=0.5)
query_ids = sorted(ds.truth)
rankings = query_topk_batch(build_index(ds.satellite), ds.street, k=10, query_ids=query_ids)
pre = recall_at_k(rankings, ds.truth, [1, 10])
print(f"{len(rankings)} queries, pre-rerank R@1 {pre.recall[1]:.3f}, R@10 {pre.recall[10]:.3f}\n")

for mode in MODES:
    timeout = 0.1 if mode == "slow" else 10.0
    with MockVlmServer(mode=mode, truth=ds.truth, slow_delay=0.5) as server:
        client = VlmClient(server.endpoint, "demo-vlm", timeout=timeout)
        jobs = jobs_from_rankings(rankings, None, k=10)
        outcomes = rerank_batch(client, jobs, k=10)
    post = recall_at_k([o.final for o in outcomes], ds.truth, [1, 10])
    used = sum(1 for o in outcomes if o.used_vlm)
    failures = {o.failure for o in outcomes if o.failure}
    print(
        f"mode {mode:8s}  used_vlm {used:2d}/{len(outcomes)}  "
        f"post R@1 {post.recall[1]:.3f}  post R@10 {post.recall[10]:.3f}"
        + (f"  failures: {sorted(failures)[:2]}" if failures else "")
    )

print("\nnotes: oracle lifts R@1 to the pre R@10 ceiling; reverse hurts R@1")
print("but cannot change R@10; every failure mode leaves recall untouched")
