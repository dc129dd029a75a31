"""Synthetic cross-view dataset with known geometry for end-to-end tests.

Each location is a unit anchor direction; the anchor set is orthonormal
(QR of a Gaussian matrix), so locations are maximally separated. The
two view domains are fixed random orthogonal distortions A and B of the
anchor space: street samples live in A-space, satellite samples in
B-space, and drone samples interpolate between the two spaces with a
per-image blend drawn from [0.25, 0.75]. A linear head per branch can
undo the distortions exactly, which makes near-perfect retrieval
reachable and lets training progress be asserted rather than eyeballed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dataset import LocationRecord, Manifest, save_manifest
from .embedding import EmbeddingTable, write_embeddings


@dataclass
class SyntheticDataset:
    train_manifest: Manifest
    test_manifest: Manifest
    street: EmbeddingTable
    satellite: EmbeddingTable
    drone: EmbeddingTable
    truth: dict[str, str]  # test street ref -> true satellite ref

    def tables(self) -> dict[str, EmbeddingTable]:
        return {"street": self.street, "satellite": self.satellite, "drone": self.drone}

    def write(self, out_dir) -> dict[str, Path]:
        """Drop manifests, embedding files, and truth into a directory."""
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "train_manifest": out_dir / "train_manifest.json",
            "test_manifest": out_dir / "test_manifest.json",
            "street_emb": out_dir / "street.cvge",
            "sat_emb": out_dir / "satellite.cvge",
            "drone_emb": out_dir / "drone.cvge",
            "truth": out_dir / "truth.json",
        }
        save_manifest(self.train_manifest, paths["train_manifest"])
        save_manifest(self.test_manifest, paths["test_manifest"])
        write_embeddings(self.street, paths["street_emb"])
        write_embeddings(self.satellite, paths["sat_emb"])
        write_embeddings(self.drone, paths["drone_emb"])
        with open(paths["truth"], "w", encoding="utf-8") as f:
            json.dump(self.truth, f, indent=2, sort_keys=True)
            f.write("\n")
        return paths


def make_synthetic_dataset(
    seed: int = 0,
    n_locations: int = 32,
    dim: int = 192,
    train_street_per_loc: int = 4,
    test_street_per_loc: int = 2,
    drones_per_loc: int = 2,
    noise: float = 0.1,
) -> SyntheticDataset:
    """Build the anchor-based two-domain dataset described in the module doc.

    The same satellite image serves as the reference for a location in
    both splits; street images are fresh draws per split, so test
    queries are unseen but share the anchors.
    """
    if n_locations < 1:
        raise ValueError("need at least one location")
    if dim < n_locations:
        raise ValueError(f"dim {dim} too small for {n_locations} orthonormal anchors")

    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    anchors, _ = np.linalg.qr(rng.standard_normal((dim, n_locations)))
    dist_a, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
    dist_b, _ = np.linalg.qr(rng.standard_normal((dim, dim)))

    street_entries: dict[str, np.ndarray] = {}
    sat_entries: dict[str, np.ndarray] = {}
    drone_entries: dict[str, np.ndarray] = {}
    train_locs: list[LocationRecord] = []
    test_locs: list[LocationRecord] = []
    truth: dict[str, str] = {}

    def street_sample(anchor: np.ndarray) -> np.ndarray:
        return dist_a @ (anchor + noise * rng.standard_normal(dim))

    def sat_sample(anchor: np.ndarray) -> np.ndarray:
        return dist_b @ (anchor + noise * rng.standard_normal(dim))

    for i in range(n_locations):
        loc_id = f"loc{i:03d}"
        anchor = anchors[:, i]

        sat_ref = f"satellite/{loc_id}"
        sat_entries[sat_ref] = sat_sample(anchor).astype(np.float32)

        train_street = []
        for j in range(train_street_per_loc):
            ref = f"street/{loc_id}_train{j}"
            street_entries[ref] = street_sample(anchor).astype(np.float32)
            train_street.append(ref)

        drone_refs = []
        for j in range(drones_per_loc):
            ref = f"drone/{loc_id}_{j}"
            g = rng.standard_normal(dim)
            alpha = rng.uniform(0.25, 0.75)
            noisy = anchor + noise * g
            blend = alpha * (dist_a @ noisy) + (1.0 - alpha) * (dist_b @ noisy)
            drone_entries[ref] = blend.astype(np.float32)
            drone_refs.append(ref)

        test_street = []
        for j in range(test_street_per_loc):
            ref = f"street/{loc_id}_test{j}"
            street_entries[ref] = street_sample(anchor).astype(np.float32)
            test_street.append(ref)
            truth[ref] = sat_ref

        train_locs.append(
            LocationRecord(
                id=loc_id,
                street=tuple(train_street),
                satellite=(sat_ref,),
                drone=tuple(drone_refs),
            )
        )
        test_locs.append(
            LocationRecord(id=loc_id, street=tuple(test_street), satellite=(sat_ref,), drone=())
        )

    return SyntheticDataset(
        train_manifest=Manifest(split="train", locations=tuple(train_locs)),
        test_manifest=Manifest(split="test", locations=tuple(test_locs)),
        street=EmbeddingTable(street_entries),
        satellite=EmbeddingTable(sat_entries),
        drone=EmbeddingTable(drone_entries),
        truth=truth,
    )
