"""Walk a view/location/image directory tree into a manifest dict.

Expected layout, one directory per view, one subdirectory per location:

    root/
      street/building_0001/xxx.jpg
      satellite/building_0001/yyy.png
      drone/building_0001/zzz.jpg

The manifest mirrors the engine's JSON schema: a split tag plus a list
of locations, each holding per-view lists of image references relative
to the root. A location exists if any view has a directory for it.
"""

from __future__ import annotations

import json
from pathlib import Path

from .errors import DatasetScanError

VIEWS = ("street", "satellite", "drone")
SPLITS = ("train", "test")
IMAGE_SUFFIXES = (".jpg", ".jpeg", ".png", ".bmp", ".webp")


def _image_refs(view_dir: Path, view: str, loc_id: str) -> list[str]:
    loc_dir = view_dir / loc_id
    if not loc_dir.is_dir():
        return []
    refs = [
        f"{view}/{loc_id}/{entry.name}"
        for entry in loc_dir.iterdir()
        if entry.is_file() and entry.suffix.lower() in IMAGE_SUFFIXES
    ]
    return sorted(refs)


def scan_dataset(root, split: str = "train") -> dict:
    """Build the manifest dict for a dataset tree; ids sort ascending."""
    root = Path(root)
    if split not in SPLITS:
        raise DatasetScanError(f"split must be one of {SPLITS}, got {split!r}")
    if not root.is_dir():
        raise DatasetScanError(f"dataset root is not a directory: {root}")

    loc_ids: set[str] = set()
    for view in VIEWS:
        view_dir = root / view
        if not view_dir.is_dir():
            continue
        for entry in view_dir.iterdir():
            if entry.is_dir():
                loc_ids.add(entry.name)

    locations = []
    for loc_id in sorted(loc_ids):
        record = {"id": loc_id}
        for view in VIEWS:
            record[view] = _image_refs(root / view, view, loc_id)
        if not any(record[view] for view in VIEWS):
            continue  # location directories with no images carry nothing
        locations.append(record)

    if not locations:
        raise DatasetScanError(f"no locations with images found under {root}")
    return {"split": split, "locations": locations}


def manifest_refs(manifest: dict, view: str) -> list[str]:
    """All image references for one view, in manifest order."""
    if view not in VIEWS:
        raise DatasetScanError(f"view must be one of {VIEWS}, got {view!r}")
    return [ref for loc in manifest["locations"] for ref in loc.get(view, [])]


def save_manifest(manifest: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
        f.write("\n")
