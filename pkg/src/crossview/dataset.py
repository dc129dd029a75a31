"""Three-view location manifests and the drone-substitution pair sampler.

A manifest lists geo-tagged locations, each with street-level, satellite,
and drone image references. ``sample_pairs`` turns a train manifest into
one epoch of (street, reference) training pairs, substituting a drone
image for the satellite image with probability ``p_drone``.

Randomness is drawn from numpy's PCG64. The stream for an epoch is seeded
with ``SeedSequence(entropy=seed mod 2**64, spawn_key=(epoch,))``, so a
(seed, epoch) pair maps to the same pair sequence on every platform, and
different epochs never share a stream.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateIdError,
    EmptyManifestError,
    ManifestParseError,
    MissingViewError,
)

SPLITS = ("train", "test")


@dataclass(frozen=True)
class LocationRecord:
    """One geo-tagged building with its per-view image references."""

    id: str
    street: tuple[str, ...]
    satellite: tuple[str, ...]
    drone: tuple[str, ...]


@dataclass(frozen=True)
class Manifest:
    split: str
    locations: tuple[LocationRecord, ...]
    # Directory the manifest was loaded from; image refs resolve against it.
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.locations)

    def resolve(self, ref: str) -> Path:
        """Resolve an image reference against the manifest directory."""
        return Path(ref) if self.root is None else self.root / ref

    def image_refs(self, view: str) -> list[str]:
        """All refs of one view, in manifest order."""
        return [ref for loc in self.locations for ref in getattr(loc, view)]


@dataclass(frozen=True)
class TrainingPair:
    """A street query matched with a satellite (or substituted drone) image."""

    query_image: str
    reference_image: str
    location_id: str
    substituted: bool


def _as_ref_list(value, loc_id: str, view: str) -> tuple[str, ...]:
    if not isinstance(value, list) or not all(isinstance(x, str) for x in value):
        raise ManifestParseError(f"location {loc_id!r}: {view!r} must be a list of strings")
    if any(x == "" for x in value):
        raise ManifestParseError(f"location {loc_id!r}: empty path string in {view!r}")
    return tuple(value)


def manifest_from_dict(data: dict, root: Path | None = None) -> Manifest:
    """Validate a decoded manifest dict and build a Manifest."""
    if not isinstance(data, dict):
        raise ManifestParseError("manifest must be a JSON object")
    split = data.get("split")
    if split not in SPLITS:
        raise ManifestParseError(f"split must be one of {SPLITS}, got {split!r}")
    raw_locations = data.get("locations")
    if not isinstance(raw_locations, list):
        raise ManifestParseError("'locations' must be a list")

    locations = []
    seen: set[str] = set()
    for entry in raw_locations:
        if not isinstance(entry, dict):
            raise ManifestParseError("each location must be a JSON object")
        loc_id = entry.get("id")
        if not isinstance(loc_id, str) or loc_id == "":
            raise ManifestParseError(f"location id must be a non-empty string, got {loc_id!r}")
        if loc_id in seen:
            raise DuplicateIdError(f"duplicate location id {loc_id!r}")
        seen.add(loc_id)
        locations.append(
            LocationRecord(
                id=loc_id,
                street=_as_ref_list(entry.get("street", []), loc_id, "street"),
                satellite=_as_ref_list(entry.get("satellite", []), loc_id, "satellite"),
                drone=_as_ref_list(entry.get("drone", []), loc_id, "drone"),
            )
        )
    if not locations:
        raise EmptyManifestError("manifest lists no locations")
    return Manifest(split=split, locations=tuple(locations), root=root)


def load_manifest(path: str | Path) -> Manifest:
    """Load and validate a manifest JSON file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ManifestParseError(f"cannot read manifest {path}: {exc}") from exc
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ManifestParseError(f"{path}: {exc}") from exc
    return manifest_from_dict(data, root=path.parent)


def save_manifest(manifest: Manifest, path: str | Path) -> None:
    """Write a manifest back out as JSON."""
    payload = {
        "split": manifest.split,
        "locations": [
            {
                "id": loc.id,
                "street": list(loc.street),
                "satellite": list(loc.satellite),
                "drone": list(loc.drone),
            }
            for loc in manifest.locations
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    """PCG64 stream for one (seed, epoch); distinct epochs get distinct streams."""
    ss = np.random.SeedSequence(entropy=seed & 0xFFFFFFFFFFFFFFFF, spawn_key=(epoch,))
    return np.random.Generator(np.random.PCG64(ss))


def sample_pairs(
    manifest: Manifest, p_drone: float, seed: int, epoch: int
) -> list[TrainingPair]:
    """Emit one shuffled epoch of training pairs with drone substitution.

    Every (street image, location) combination yields exactly one pair per
    epoch. The reference is the location's first satellite image, replaced
    by a uniformly drawn drone image with probability ``p_drone``; a
    location without drone imagery silently falls back to its satellite
    image. The result is a pure function of (manifest, p_drone, seed,
    epoch).
    """
    if manifest.split != "train":
        raise ValueError(f"sample_pairs requires a train manifest, got split={manifest.split!r}")
    if not 0.0 <= p_drone <= 1.0:
        raise ValueError(f"p_drone must be in [0, 1], got {p_drone}")

    combos: list[tuple[str, LocationRecord]] = []
    for loc in manifest.locations:
        if loc.street and not loc.satellite:
            raise MissingViewError(f"location {loc.id!r} has street images but no satellite image")
        combos.extend((street_ref, loc) for street_ref in loc.street)

    rng = epoch_rng(seed, epoch)
    order = rng.permutation(len(combos))

    pairs: list[TrainingPair] = []
    for i in order:
        street_ref, loc = combos[i]
        substitute = rng.random() < p_drone
        if substitute and loc.drone:
            ref = loc.drone[int(rng.integers(len(loc.drone)))]
            pairs.append(TrainingPair(street_ref, ref, loc.id, substituted=True))
        else:
            pairs.append(TrainingPair(street_ref, loc.satellite[0], loc.id, substituted=False))
    return pairs
