"""Sweep the drone-substitution probability and compare retrieval quality.

During training, each satellite target is swapped for a drone image of
the same location with probability p. The sweep reports one row per p;
which p wins depends on the data, so read the table rather than
expecting a fixed ordering.
"""

from crossview.evaluation import compare_runs, recall_at_k
from crossview.index import build_index, query_topk_batch
from crossview.synthetic import make_synthetic_dataset
from crossview.trainer import TrainConfig, project_table, train

ds = make_synthetic_dataset(seed=11, n_locations=32, dim=192, noise=0.15)
query_ids = sorted(ds.truth)

rows = []
for p_drone in (0.0, 0.3, 1.0):
    config = TrainConfig(seed=11, d_out=64, epochs=20, lr0=1e-2, p_drone=p_drone)
    result = train(ds.train_manifest, ds.tables(), config)
    street = project_table(result.model.street_head, ds.street)
    satellite = project_table(result.model.sat_head, ds.satellite)
    rankings = query_topk_batch(build_index(satellite), street, k=10, query_ids=query_ids)
    report = recall_at_k(rankings, ds.truth, [1, 5, 10])
    rows.append((f"p_drone={p_drone}", report))
    print(f"trained p_drone={p_drone}: final loss {result.epoch_losses[-1]:.4f}")

text, _ = compare_runs(rows)
print("\n" + text)
