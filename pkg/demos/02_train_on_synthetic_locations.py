"""Train the two projection heads on the synthetic location dataset.

Street and satellite embeddings start in different orthogonal
distortions of a shared anchor space, so raw cosine retrieval is
hopeless; the linear heads learn to undo the distortions.
"""

import numpy as np

from crossview.evaluation import recall_at_k
from crossview.index import build_index, query_topk_batch
from crossview.synthetic import make_synthetic_dataset
from crossview.trainer import TrainConfig, project_table, train

ds = make_synthetic_dataset(seed=7, n_locations=32, dim=192, noise=0.1)
query_ids = sorted(ds.truth)
print(f"{len(ds.train_manifest.locations)} locations, {len(query_ids)} test queries")


def recall_r1(street_table, sat_table):
    rankings = query_topk_batch(build_index(sat_table), street_table, k=10, query_ids=query_ids)
    return recall_at_k(rankings, ds.truth, [1]).recall[1]


print(f"R@1 on raw embeddings: {recall_r1(ds.street, ds.satellite):.3f}")

config = TrainConfig(seed=7, d_out=64, epochs=30, lr0=1e-2, p_drone=0.3)
result = train(ds.train_manifest, ds.tables(), config)

print("\nepoch loss trajectory (every 5th):")
for epoch, loss in enumerate(result.epoch_losses):
    if epoch % 5 == 0 or epoch == len(result.epoch_losses) - 1:
        print(f"  epoch {epoch:2d}  loss {loss:.4f}")

street = project_table(result.model.street_head, ds.street)
satellite = project_table(result.model.sat_head, ds.satellite)
print(f"\nR@1 after training: {recall_r1(street, satellite):.3f}")
print(f"learned logit scale: {np.exp(result.model.logit_scale):.2f}")
