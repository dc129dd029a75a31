"""Tests for the backbone registry and the two feature extractors."""

import numpy as np
import pytest

from export_tool.backbones import (
    EXPORT_SIZES,
    REGISTRY,
    PretrainedExtractor,
    ProjectionExtractor,
    get_preset,
    make_extractor,
)
from export_tool.errors import (
    BackboneLoadError,
    UnknownBackboneError,
    UnsupportedSizeError,
)


class TestRegistry:
    def test_six_presets(self):
        assert sorted(REGISTRY) == [
            "convnext-base",
            "convnext-tiny",
            "dinov2-base",
            "dinov2-large",
            "vit-base",
            "vit-large",
        ]

    def test_base_and_large_dims(self):
        # Base-size backbones emit 768-wide features, large ones 1024.
        for name in ("convnext-tiny", "vit-base", "dinov2-base"):
            assert REGISTRY[name].dim == 768
        for name in ("convnext-base", "vit-large", "dinov2-large"):
            assert REGISTRY[name].dim == 1024

    def test_supported_sizes_are_export_sizes(self):
        for preset in REGISTRY.values():
            assert preset.supported_sizes
            assert set(preset.supported_sizes) <= set(EXPORT_SIZES)

    def test_get_preset(self):
        preset = get_preset("dinov2-large")
        assert preset.dim == 1024
        assert preset.family == "dinov2"

    def test_unknown_name(self):
        with pytest.raises(UnknownBackboneError, match="resnet-50"):
            get_preset("resnet-50")


class TestMakeExtractor:
    def test_selects_projection(self):
        ext = make_extractor(get_preset("vit-base"), 224, features="projection")
        assert isinstance(ext, ProjectionExtractor)

    def test_selects_pretrained(self):
        ext = make_extractor(get_preset("vit-base"), 224, features="pretrained")
        assert isinstance(ext, PretrainedExtractor)

    def test_size_not_in_export_sizes(self):
        with pytest.raises(UnsupportedSizeError):
            make_extractor(get_preset("vit-base"), 256, features="projection")

    def test_size_not_supported_by_preset(self):
        # 518 is a valid export size but only the dinov2 presets take it.
        with pytest.raises(UnsupportedSizeError):
            make_extractor(get_preset("convnext-tiny"), 518, features="projection")

    def test_bad_feature_source(self):
        with pytest.raises(ValueError):
            make_extractor(get_preset("vit-base"), 224, features="random")


class TestProjectionExtractor:
    def batch(self, n=4, size=224, seed=0):
        rng = np.random.default_rng(seed)
        return rng.random((n, size, size, 3), dtype=np.float32)

    def test_output_shape_and_dtype(self):
        ext = make_extractor(get_preset("vit-base"), 224, features="projection")
        out = ext.extract(self.batch(5))
        assert out.shape == (5, 768)
        assert out.dtype == np.float32

    def test_large_preset_width(self):
        ext = make_extractor(get_preset("dinov2-large"), 518, features="projection")
        out = ext.extract(self.batch(2, size=518))
        assert out.shape == (2, 1024)

    def test_deterministic_across_instances(self):
        batch = self.batch(3)
        a = ProjectionExtractor(get_preset("vit-base"), 224).extract(batch)
        b = ProjectionExtractor(get_preset("vit-base"), 224).extract(batch)
        np.testing.assert_array_equal(a, b)

    def test_differs_across_backbones(self):
        batch = self.batch(3)
        a = ProjectionExtractor(get_preset("vit-base"), 224).extract(batch)
        b = ProjectionExtractor(get_preset("dinov2-base"), 224).extract(batch)
        assert not np.allclose(a, b)

    def test_differs_across_sizes(self):
        a = ProjectionExtractor(get_preset("vit-base"), 224)
        b = ProjectionExtractor(get_preset("vit-base"), 384)
        assert not np.allclose(a._matrix, b._matrix)

    def test_distinct_images_distinct_features(self):
        ext = ProjectionExtractor(get_preset("vit-base"), 224)
        out = ext.extract(self.batch(2, seed=9))
        assert not np.allclose(out[0], out[1])

    def test_constant_image_pools_exactly(self):
        # A constant image pools to a constant grid, so the feature is the
        # projection matrix's row sums times the pixel value.
        ext = ProjectionExtractor(get_preset("vit-base"), 224)
        batch = np.full((1, 224, 224, 3), 0.5, dtype=np.float32)
        want = 0.5 * ext._matrix.sum(axis=1)
        np.testing.assert_allclose(ext.extract(batch)[0], want, rtol=1e-4)


class TestPretrainedExtractor:
    def test_load_failure_wrapped(self, monkeypatch):
        # Force the lazy import to blow up; the error type must be ours.
        import builtins

        real_import = builtins.__import__

        def failing_import(name, *args, **kwargs):
            if name == "torch":
                raise ImportError("torch is unavailable in this test")
            return real_import(name, *args, **kwargs)

        monkeypatch.setattr(builtins, "__import__", failing_import)
        ext = PretrainedExtractor(get_preset("vit-base"), 224)
        with pytest.raises(BackboneLoadError, match="vit-base"):
            ext.extract(np.zeros((1, 224, 224, 3), dtype=np.float32))

    def test_weight_fetch_failure_wrapped(self, monkeypatch):
        # No weights can be downloaded here; any builder error must come
        # back as BackboneLoadError, not a raw torch exception.
        import torchvision.models as tvm

        def failing_get_model(*args, **kwargs):
            raise RuntimeError("download blocked")

        monkeypatch.setattr(tvm, "get_model", failing_get_model)
        ext = PretrainedExtractor(get_preset("convnext-tiny"), 224)
        with pytest.raises(BackboneLoadError, match="convnext-tiny"):
            ext.extract(np.zeros((1, 224, 224, 3), dtype=np.float32))

    def test_hub_failure_wrapped(self, monkeypatch):
        import torch

        def failing_hub_load(*args, **kwargs):
            raise RuntimeError("no network")

        monkeypatch.setattr(torch.hub, "load", failing_hub_load)
        ext = PretrainedExtractor(get_preset("dinov2-base"), 224)
        with pytest.raises(BackboneLoadError, match="dinov2-base"):
            ext.extract(np.zeros((1, 224, 224, 3), dtype=np.float32))

    def test_wrong_output_width_rejected(self, monkeypatch):
        import torch

        class WrongWidth(torch.nn.Module):
            def forward(self, x):
                return torch.zeros((x.shape[0], 99))

        ext = PretrainedExtractor(get_preset("vit-base"), 224)
        monkeypatch.setattr(ext, "_load", lambda: None)
        ext._model = WrongWidth()
        ext._torch = torch
        with pytest.raises(BackboneLoadError, match="expected"):
            ext.extract(np.zeros((2, 224, 224, 3), dtype=np.float32))

    def test_stubbed_model_end_to_end(self, monkeypatch):
        # With the network-facing loader stubbed by a tiny linear model,
        # extract() normalizes, runs the forward pass, and returns float32.
        import torch

        class MeanPool(torch.nn.Module):
            def forward(self, x):
                pooled = x.mean(dim=(2, 3))  # (n, 3)
                return pooled.repeat(1, 256)  # (n, 768)

        ext = PretrainedExtractor(get_preset("vit-base"), 224)
        monkeypatch.setattr(ext, "_load", lambda: None)
        ext._model = MeanPool()
        ext._torch = torch
        out = ext.extract(np.full((2, 224, 224, 3), 0.5, dtype=np.float32))
        assert out.shape == (2, 768)
        assert out.dtype == np.float32
        assert np.all(np.isfinite(out))

    def test_inference_failure_wrapped(self, monkeypatch):
        import torch

        class Boom(torch.nn.Module):
            def forward(self, x):
                raise RuntimeError("shape assert")

        ext = PretrainedExtractor(get_preset("vit-base"), 224)
        monkeypatch.setattr(ext, "_load", lambda: None)
        ext._model = Boom()
        ext._torch = torch
        with pytest.raises(BackboneLoadError, match="inference failed"):
            ext.extract(np.zeros((1, 224, 224, 3), dtype=np.float32))
