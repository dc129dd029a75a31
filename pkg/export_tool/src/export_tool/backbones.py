"""Backbone registry and feature extractors.

Two feature sources share one interface:

- ``pretrained``: the real frozen backbone via torch/torchvision, loaded
  lazily so the tool works without torch installed. Any import,
  construction, or weight-download failure surfaces as
  BackboneLoadError.
- ``projection``: a deterministic stand-in that pools the image to an
  8x8 RGB grid and applies a fixed random projection to the preset's
  output width. No weights, no network, bit-stable across runs; meant
  for tests, fixtures, and plumbing checks, not for retrieval quality.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .errors import BackboneLoadError, UnknownBackboneError, UnsupportedSizeError

EXPORT_SIZES = (224, 384, 448, 518)
FEATURE_SOURCES = ("pretrained", "projection")

# ImageNet statistics used by every pretrained preset
_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass(frozen=True)
class BackbonePreset:
    name: str
    family: str  # "convnext" | "vit" | "dinov2"
    dim: int
    supported_sizes: tuple[int, ...]
    weights: str  # torchvision weight enum or hub model id


REGISTRY: dict[str, BackbonePreset] = {
    p.name: p
    for p in (
        BackbonePreset("convnext-tiny", "convnext", 768, (224, 384), "IMAGENET1K_V1"),
        BackbonePreset("convnext-base", "convnext", 1024, (224, 384), "IMAGENET1K_V1"),
        BackbonePreset("vit-base", "vit", 768, (224, 384, 448), "IMAGENET1K_V1"),
        BackbonePreset("vit-large", "vit", 1024, (224, 384, 448), "IMAGENET1K_V1"),
        BackbonePreset("dinov2-base", "dinov2", 768, (224, 518), "dinov2_vitb14"),
        BackbonePreset("dinov2-large", "dinov2", 1024, (224, 518), "dinov2_vitl14"),
    )
}


def get_preset(name: str) -> BackbonePreset:
    try:
        return REGISTRY[name]
    except KeyError:
        raise UnknownBackboneError(
            f"unknown backbone {name!r}; registered: {', '.join(sorted(REGISTRY))}"
        )


class ProjectionExtractor:
    """Deterministic projection features: pool to 8x8 RGB, project to dim."""

    GRID = 8

    def __init__(self, preset: BackbonePreset, size: int):
        self.preset = preset
        self.size = size
        digest = hashlib.sha256(f"{preset.name}:{size}".encode()).digest()
        seed = int.from_bytes(digest[:8], "little")
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
        n_in = 3 * self.GRID * self.GRID
        self._matrix = (
            rng.standard_normal((preset.dim, n_in)) / np.sqrt(n_in)
        ).astype(np.float32)

    def extract(self, batch: np.ndarray) -> np.ndarray:
        n, h, w, _ = batch.shape
        g = self.GRID
        # Average over a g x g grid of cells; linspace boundaries keep this
        # exact for sizes that are not multiples of g (518 is not).
        ys = np.linspace(0, h, g + 1).astype(int)
        xs = np.linspace(0, w, g + 1).astype(int)
        pooled = np.empty((n, g, g, 3), dtype=np.float32)
        for i in range(g):
            for j in range(g):
                cell = batch[:, ys[i] : ys[i + 1], xs[j] : xs[j + 1], :]
                pooled[:, i, j, :] = cell.mean(axis=(1, 2))
        flat = pooled.reshape(n, -1)
        return flat @ self._matrix.T


class PretrainedExtractor:
    """Frozen torch backbone producing pooled features."""

    def __init__(self, preset: BackbonePreset, size: int):
        self.preset = preset
        self.size = size
        self._model = None
        self._torch = None

    def _load(self):
        if self._model is not None:
            return
        try:
            import torch

            if self.preset.family == "convnext":
                from torchvision.models import get_model

                arch = "convnext_tiny" if self.preset.dim == 768 else "convnext_base"
                model = get_model(arch, weights=self.preset.weights)
                # Keep the norm + flatten, drop only the classification layer.
                model.classifier[2] = torch.nn.Identity()
            elif self.preset.family == "vit":
                from torchvision.models import get_model

                arch = "vit_b_16" if self.preset.dim == 768 else "vit_l_16"
                kwargs = {} if self.size == 224 else {"image_size": self.size}
                model = get_model(arch, weights=self.preset.weights, **kwargs)
                model.heads = torch.nn.Identity()
            else:
                model = torch.hub.load("facebookresearch/dinov2", self.preset.weights)
        except Exception as exc:
            raise BackboneLoadError(
                f"cannot load pretrained backbone {self.preset.name!r}: {exc}"
            )
        model.eval()
        self._model = model
        self._torch = torch

    def extract(self, batch: np.ndarray) -> np.ndarray:
        self._load()
        torch = self._torch
        normalized = (batch - _MEAN) / _STD
        tensor = torch.from_numpy(normalized.transpose(0, 3, 1, 2).copy())
        try:
            with torch.no_grad():
                features = self._model(tensor)
        except Exception as exc:
            raise BackboneLoadError(
                f"{self.preset.name} inference failed at size {self.size}: {exc}"
            )
        out = features.detach().cpu().numpy().astype(np.float32)
        if out.ndim != 2 or out.shape[1] != self.preset.dim:
            raise BackboneLoadError(
                f"{self.preset.name} produced shape {out.shape}, expected (*, {self.preset.dim})"
            )
        return out


def make_extractor(preset: BackbonePreset, size: int, features: str = "pretrained"):
    if size not in EXPORT_SIZES:
        raise UnsupportedSizeError(f"size must be one of {EXPORT_SIZES}, got {size}")
    if size not in preset.supported_sizes:
        raise UnsupportedSizeError(
            f"{preset.name} supports sizes {preset.supported_sizes}, got {size}"
        )
    if features == "projection":
        return ProjectionExtractor(preset, size)
    if features == "pretrained":
        return PretrainedExtractor(preset, size)
    raise ValueError(f"features must be one of {FEATURE_SOURCES}, got {features!r}")
