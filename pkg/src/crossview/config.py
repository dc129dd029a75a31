"""Pipeline configuration: one structured file describing a whole run.

The file is JSON or TOML (picked by extension) with flat sections per
stage; relative paths resolve against the config file's directory so a
config checked in next to its data stays portable. Command-line flags
override file values; all randomness flows from the single seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import DataError
from .mock_vlm import MODES
from .trainer import TrainConfig

DEFAULT_KS = [1, 5, 10]


@dataclass
class PipelineConfig:
    manifest: Path | None = None
    street_emb: Path | None = None
    sat_emb: Path | None = None
    drone_emb: Path | None = None
    model: Path | None = None
    out_dir: Path = Path("runs/out")
    truth: Path | None = None

    embed_grid: int = 8
    seed: int = 0

    train: TrainConfig | None = None

    k: int = 10  # retrieval depth
    rerank_k: int = 10  # head size passed to the VLM

    endpoint: str | None = None
    model_name: str = "mock-vlm"
    concurrency: int = 4
    retries: int = 0
    timeout: float = 30.0
    mock_mode: str | None = None

    ks: list[int] = field(default_factory=lambda: list(DEFAULT_KS))

    def validate(self) -> None:
        if self.manifest is None:
            raise DataError("config must name a manifest path")
        if not self.ks or any(k < 1 for k in self.ks):
            raise DataError(f"eval ks must be positive integers, got {self.ks}")
        if self.k < max(self.ks):
            raise DataError(
                f"retrieval k ({self.k}) must be at least max of eval ks ({max(self.ks)})"
            )
        if self.rerank_k < 1:
            raise DataError(f"rerank k must be positive, got {self.rerank_k}")
        if self.concurrency < 1:
            raise DataError(f"concurrency must be positive, got {self.concurrency}")
        if self.mock_mode is not None and self.mock_mode not in MODES:
            raise DataError(f"unknown mock mode {self.mock_mode!r}; pick one of {MODES}")
        if self.embed_grid < 1:
            raise DataError(f"embed grid must be positive, got {self.embed_grid}")


def _load_structured(path: Path) -> dict:
    try:
        if path.suffix.lower() == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:
                import tomli as tomllib
            with open(path, "rb") as f:
                return tomllib.load(f)
        with open(path, encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise DataError(f"config file not found: {path}")
    except (json.JSONDecodeError, ValueError) as exc:
        raise DataError(f"{path}: cannot parse config: {exc}")


def _resolve(base: Path, value) -> Path | None:
    if value is None:
        return None
    p = Path(value)
    return p if p.is_absolute() else base / p


def load_config(path) -> PipelineConfig:
    """Read and validate a pipeline config file (JSON or TOML)."""
    path = Path(path)
    data = _load_structured(path)
    if not isinstance(data, dict):
        raise DataError(f"{path}: config root must be a table/object")
    base = path.parent

    cfg = PipelineConfig()
    paths = data.get("paths", {})
    if not isinstance(paths, dict):
        raise DataError(f"{path}: 'paths' must be a table/object")
    cfg.manifest = _resolve(base, paths.get("manifest"))
    cfg.street_emb = _resolve(base, paths.get("street_emb"))
    cfg.sat_emb = _resolve(base, paths.get("sat_emb"))
    cfg.drone_emb = _resolve(base, paths.get("drone_emb"))
    cfg.model = _resolve(base, paths.get("model"))
    cfg.truth = _resolve(base, paths.get("truth"))
    out_dir = _resolve(base, paths.get("out_dir"))
    if out_dir is not None:
        cfg.out_dir = out_dir

    cfg.seed = int(data.get("seed", cfg.seed))
    cfg.embed_grid = int(data.get("embed_grid", cfg.embed_grid))

    train = data.get("train")
    if train is not None:
        if not isinstance(train, dict):
            raise DataError(f"{path}: 'train' must be a table/object")
        cfg.train = TrainConfig(
            seed=int(train.get("seed", cfg.seed)),
            d_out=int(train.get("d_out", 64)),
            epochs=int(train.get("epochs", 100)),
            batch_size=int(train.get("batch_size", 32)),
            lr0=float(train.get("lr0", 1e-5)),
            gamma=float(train.get("gamma", 0.9)),
            p_drone=float(train.get("p_drone", 0.3)),
            weight_decay=float(train.get("weight_decay", 0.01)),
            label_smoothing=float(train.get("label_smoothing", 0.0)),
        )

    retrieve = data.get("retrieve", {})
    if not isinstance(retrieve, dict):
        raise DataError(f"{path}: 'retrieve' must be a table/object")
    cfg.k = int(retrieve.get("k", cfg.k))

    rerank = data.get("rerank", {})
    if not isinstance(rerank, dict):
        raise DataError(f"{path}: 'rerank' must be a table/object")
    cfg.rerank_k = int(rerank.get("k", cfg.rerank_k))
    endpoint = rerank.get("endpoint")
    cfg.endpoint = str(endpoint) if endpoint is not None else None
    cfg.model_name = str(rerank.get("model_name", cfg.model_name))
    cfg.concurrency = int(rerank.get("concurrency", cfg.concurrency))
    cfg.retries = int(rerank.get("retries", cfg.retries))
    cfg.timeout = float(rerank.get("timeout", cfg.timeout))
    mock_mode = rerank.get("mock_mode")
    cfg.mock_mode = str(mock_mode) if mock_mode is not None else None

    eval_section = data.get("eval", {})
    if not isinstance(eval_section, dict):
        raise DataError(f"{path}: 'eval' must be a table/object")
    ks = eval_section.get("ks", cfg.ks)
    if not isinstance(ks, list) or not all(isinstance(k, int) and not isinstance(k, bool) for k in ks):
        raise DataError(f"{path}: eval ks must be a list of integers")
    cfg.ks = list(ks)

    # Cross-field invariants (k covering ks, etc.) are checked by the
    # pipeline after flag overrides land; a config used by a single
    # subcommand need not satisfy them.
    return cfg
