"""Offline embedding export for view/location image trees.

Walks a dataset laid out as ``root/{street,satellite,drone}/<loc_id>/*.png``,
runs each image through a frozen backbone (or a deterministic projection
stand-in), and writes the per-view embedding tables plus a manifest in the
formats the retrieval engine consumes.
"""

__version__ = "0.1.0"

from .backbones import (
    EXPORT_SIZES,
    FEATURE_SOURCES,
    REGISTRY,
    BackbonePreset,
    get_preset,
    make_extractor,
)
from .cvge import read_cvge, write_cvge
from .errors import (
    BackboneLoadError,
    DatasetScanError,
    DecodeError,
    ExportToolError,
    FormatError,
    UnknownBackboneError,
    UnsupportedSizeError,
)
from .export import ExportJob, export_embeddings
from .scan import SPLITS, VIEWS, manifest_refs, save_manifest, scan_dataset

__all__ = [
    "__version__",
    "EXPORT_SIZES",
    "FEATURE_SOURCES",
    "REGISTRY",
    "SPLITS",
    "VIEWS",
    "BackbonePreset",
    "BackboneLoadError",
    "DatasetScanError",
    "DecodeError",
    "ExportJob",
    "ExportToolError",
    "FormatError",
    "UnknownBackboneError",
    "UnsupportedSizeError",
    "export_embeddings",
    "get_preset",
    "make_extractor",
    "manifest_refs",
    "read_cvge",
    "save_manifest",
    "scan_dataset",
    "write_cvge",
]
