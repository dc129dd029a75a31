"""The export job: scan, embed, and write one CVGE file per view."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backbones import EXPORT_SIZES, get_preset, make_extractor
from .cvge import write_cvge
from .errors import DatasetScanError
from .images import load_batch
from .scan import VIEWS, manifest_refs, save_manifest, scan_dataset


@dataclass
class ExportJob:
    root: Path
    backbone: str
    size: int
    out_dir: Path
    views: tuple[str, ...] = VIEWS
    split: str = "train"
    features: str = "pretrained"
    batch_size: int = 16

    def validate(self) -> None:
        if self.size not in EXPORT_SIZES:
            raise DatasetScanError(f"size must be one of {EXPORT_SIZES}, got {self.size}")
        bad = [v for v in self.views if v not in VIEWS]
        if bad or not self.views:
            raise DatasetScanError(f"views must be a non-empty subset of {VIEWS}, got {self.views}")
        if self.batch_size < 1:
            raise DatasetScanError(f"batch size must be positive, got {self.batch_size}")


def export_embeddings(job: ExportJob) -> dict[str, Path]:
    """Run the job; returns paths keyed by 'manifest' and view names.

    The manifest is written first, then one embedding file per requested
    view with one row per image reference, rows in manifest order.
    """
    job.validate()
    preset = get_preset(job.backbone)
    extractor = make_extractor(preset, job.size, job.features)

    root = Path(job.root)
    manifest = scan_dataset(root, split=job.split)
    out_dir = Path(job.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    paths: dict[str, Path] = {"manifest": out_dir / "manifest.json"}
    save_manifest(manifest, paths["manifest"])

    for view in job.views:
        refs = manifest_refs(manifest, view)
        rows: list[tuple[str, np.ndarray]] = []
        for start in range(0, len(refs), job.batch_size):
            chunk = refs[start : start + job.batch_size]
            batch = load_batch([root / ref for ref in chunk], job.size)
            features = extractor.extract(batch)
            rows.extend(zip(chunk, features))
        out_path = out_dir / f"{view}.cvge"
        write_cvge(rows, preset.dim, out_path)
        paths[view] = out_path
    return paths
