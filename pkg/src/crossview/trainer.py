"""Two-branch projection training with symmetric InfoNCE and AdamW.

The model is a pair of linear heads (street branch, satellite branch,
no weight sharing) over frozen base embeddings, plus one trainable
logit scale held in log space. Forward output is always L2-normalized,
so cosine similarity between branches reduces to a dot product.

All training math runs in float64 for stable gradient checks; the CVGM
checkpoint format stores float32, matching the embedding files. The
head initializer draws from ``SeedSequence(seed mod 2**64)`` (PCG64),
while each epoch's pair sampling uses the per-epoch streams documented
in :mod:`crossview.dataset`, so one seed reproduces a whole run.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .dataset import Manifest, sample_pairs
from .embedding import EmbeddingTable
from .errors import (
    BadMagicError,
    BatchMismatchError,
    DimMismatchError,
    MissingEmbeddingError,
    NonFiniteLossError,
    NonFiniteParamError,
    TrainingDivergedError,
    TruncatedFileError,
    UnsupportedVersionError,
    ZeroVectorError,
)

MODEL_MAGIC = b"CVGM"
MODEL_FORMAT_VERSION = 1

# exp(logit_scale) is capped here after every optimizer step.
MAX_LOGIT_SCALE = math.log(100.0)
INIT_LOGIT_SCALE = math.log(1.0 / 0.07)


@dataclass
class LinearHead:
    weight: np.ndarray  # (d_out, d_in) float64
    bias: np.ndarray  # (d_out,) float64


@dataclass
class ProjectionModel:
    street_head: LinearHead
    sat_head: LinearHead
    logit_scale: float = INIT_LOGIT_SCALE

    @property
    def d_in(self) -> int:
        return self.street_head.weight.shape[1]

    @property
    def d_out(self) -> int:
        return self.street_head.weight.shape[0]


def init_model(d_in: int, d_out: int, seed: int) -> ProjectionModel:
    """Fan-in uniform init for both heads, zero biases, default logit scale."""
    rng = np.random.Generator(
        np.random.PCG64(np.random.SeedSequence(entropy=seed & 0xFFFFFFFFFFFFFFFF))
    )
    limit = 1.0 / math.sqrt(d_in)
    return ProjectionModel(
        street_head=LinearHead(
            weight=rng.uniform(-limit, limit, size=(d_out, d_in)),
            bias=np.zeros(d_out),
        ),
        sat_head=LinearHead(
            weight=rng.uniform(-limit, limit, size=(d_out, d_in)),
            bias=np.zeros(d_out),
        ),
    )


def forward(head: LinearHead, x: np.ndarray) -> np.ndarray:
    """Project through a head and L2-normalize: W x + b scaled to unit norm.

    Accepts a single vector (d_in,) or a batch (n, d_in); output matches
    the input's leading shape.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    batch = x[None, :] if single else x
    if batch.ndim != 2 or batch.shape[1] != head.weight.shape[1]:
        raise DimMismatchError(
            f"input dim {batch.shape[-1]} does not match head d_in {head.weight.shape[1]}"
        )
    z = batch @ head.weight.T + head.bias
    norms = np.linalg.norm(z, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ZeroVectorError("projection produced a zero vector; head is degenerate")
    out = z / norms
    return out[0] if single else out


def project_table(head: LinearHead, table: EmbeddingTable) -> EmbeddingTable:
    """Run every table entry through a head; output entries are unit-norm float32."""
    ids = table.ids()
    if not ids:
        return EmbeddingTable({}, dim=head.weight.shape[0])
    projected = forward(head, table.matrix(ids).astype(np.float64))
    return EmbeddingTable({k: row for k, row in zip(ids, projected)})


@dataclass
class InfoNCEResult:
    loss: float
    grad_street: np.ndarray  # dLoss/dU, shape (n, d)
    grad_ref: np.ndarray  # dLoss/dV, shape (n, d)
    grad_logit_scale: float


def _row_cross_entropy(logits: np.ndarray, eps: float):
    """Row-wise CE against diagonal targets (optionally smoothed).

    Returns (mean loss over rows, row-stochastic softmax matrix). Kept
    as the single code path for both halves of the symmetric loss so
    swapping the two batches swaps the halves bitwise.
    """
    n = logits.shape[0]
    row_max = logits.max(axis=1, keepdims=True)
    shifted = np.exp(logits - row_max)
    denom = shifted.sum(axis=1)
    lse = row_max[:, 0] + np.log(denom)
    target = (1.0 - eps) * np.diagonal(logits) + (eps / n) * logits.sum(axis=1)
    soft = shifted / denom[:, None]
    return (lse - target).mean(), soft


def info_nce_loss(
    street: np.ndarray,
    ref: np.ndarray,
    logit_scale: float,
    label_smoothing: float = 0.0,
) -> InfoNCEResult:
    """Symmetric InfoNCE over a batch of matched embedding pairs.

    Logits are ``exp(logit_scale) * street @ ref.T`` with matches on the
    diagonal; the loss averages row-wise and column-wise cross-entropy.
    Gradients with respect to both batches and the logit scale are exact
    closed forms (the same softmax terms the loss is built from), which
    the test suite pins against central finite differences.
    """
    U = np.asarray(street, dtype=np.float64)
    V = np.asarray(ref, dtype=np.float64)
    if U.ndim != 2 or V.ndim != 2 or U.shape != V.shape:
        raise BatchMismatchError(f"batch shapes differ: {U.shape} vs {V.shape}")
    n = U.shape[0]
    if n < 1:
        raise BatchMismatchError("batch must contain at least one pair")
    if not 0.0 <= label_smoothing < 1.0:
        raise ValueError(f"label_smoothing must be in [0, 1), got {label_smoothing}")

    scale = math.exp(logit_scale)
    logits = scale * (U @ V.T)
    eps = label_smoothing

    loss_rows, P = _row_cross_entropy(logits, eps)
    loss_cols, Q_t = _row_cross_entropy(np.ascontiguousarray(logits.T), eps)
    loss = 0.5 * (loss_rows + loss_cols)

    # Smoothed target matrix: eps/n everywhere plus (1 - eps) on the diagonal.
    T = np.full((n, n), eps / n)
    np.fill_diagonal(T, 1.0 - eps + eps / n)
    G = (P + Q_t.T - 2.0 * T) / (2.0 * n)

    grad_street = scale * (G @ V)
    grad_ref = scale * (G.T @ U)
    grad_logit_scale = float((G * logits).sum())

    if not (math.isfinite(loss) and math.isfinite(grad_logit_scale)
            and np.all(np.isfinite(grad_street)) and np.all(np.isfinite(grad_ref))):
        raise NonFiniteLossError("InfoNCE loss or gradients are non-finite")
    return InfoNCEResult(float(loss), grad_street, grad_ref, grad_logit_scale)


@dataclass
class OptimizerState:
    """Per-parameter AdamW moment estimates plus the shared step counter."""

    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adamw_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: OptimizerState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.01,
    decay_params: set[str] | None = None,
) -> tuple[dict[str, np.ndarray], OptimizerState]:
    """One AdamW step over a dict of named float64 arrays.

    Updates moving averages m and v, applies bias correction, and takes
    the decoupled-decay step ``p -= lr * (m_hat / (sqrt(v_hat) + eps)
    + weight_decay * p)``. ``decay_params`` restricts weight decay to
    the named parameters; None decays all of them. The state is updated
    in place and returned alongside the new parameter dict.
    """
    if lr <= 0.0:
        raise ValueError(f"lr must be positive, got {lr}")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    updated: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        p = np.asarray(p, dtype=np.float64)
        if g.shape != p.shape:
            raise DimMismatchError(f"grad shape {g.shape} != param shape {p.shape} for {name!r}")
        m = state.m.get(name, np.zeros_like(p))
        v = state.v.get(name, np.zeros_like(p))
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        state.m[name] = m
        state.v[name] = v
        wd = weight_decay if decay_params is None or name in decay_params else 0.0
        with np.errstate(invalid="ignore", over="ignore"):
            new_p = p - lr * ((m / bc1) / (np.sqrt(v / bc2) + eps) + wd * p)
        if not np.all(np.isfinite(new_p)):
            raise NonFiniteParamError(f"parameter {name!r} became non-finite at step {state.t}")
        updated[name] = new_p
    return updated, state


def lr_at(epoch: int, lr0: float, gamma: float) -> float:
    """Exponential schedule: lr0 * gamma**epoch, constant within an epoch."""
    if lr0 <= 0.0:
        raise ValueError(f"lr0 must be positive, got {lr0}")
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must be in (0, 1], got {gamma}")
    if epoch < 0:
        raise ValueError(f"epoch must be non-negative, got {epoch}")
    return lr0 * gamma**epoch


@dataclass
class TrainConfig:
    seed: int
    d_out: int
    epochs: int = 100
    batch_size: int = 32
    lr0: float = 1e-5
    gamma: float = 0.9
    p_drone: float = 0.3
    weight_decay: float = 0.01
    label_smoothing: float = 0.0

    def validate(self) -> None:
        if self.epochs < 0 or self.batch_size < 1 or self.d_out < 1:
            raise ValueError("epochs must be non-negative; batch_size and d_out positive")
        if self.lr0 <= 0 or not 0 < self.gamma <= 1:
            raise ValueError("lr0 must be positive and gamma in (0, 1]")
        if not 0 <= self.p_drone <= 1:
            raise ValueError("p_drone must be in [0, 1]")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be non-negative")


@dataclass
class TrainResult:
    model: ProjectionModel
    epoch_losses: list[float] = field(default_factory=list)


def _model_params(model: ProjectionModel) -> dict[str, np.ndarray]:
    return {
        "street_w": model.street_head.weight,
        "street_b": model.street_head.bias,
        "sat_w": model.sat_head.weight,
        "sat_b": model.sat_head.bias,
        "logit_scale": np.asarray(model.logit_scale, dtype=np.float64),
    }


def _params_to_model(params: dict[str, np.ndarray]) -> ProjectionModel:
    return ProjectionModel(
        street_head=LinearHead(params["street_w"], params["street_b"]),
        sat_head=LinearHead(params["sat_w"], params["sat_b"]),
        logit_scale=float(params["logit_scale"]),
    )


def _norm_backward(pre: np.ndarray, out: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Gradient through row-wise L2 normalization: out = pre / ||pre||."""
    norms = np.linalg.norm(pre, axis=1, keepdims=True)
    return (grad_out - (out * grad_out).sum(axis=1, keepdims=True) * out) / norms


def train(
    manifest: Manifest,
    base_embeddings: dict[str, EmbeddingTable],
    config: TrainConfig,
) -> TrainResult:
    """Run the full contrastive training loop over frozen base embeddings.

    ``base_embeddings`` maps view name ("street", "satellite", "drone")
    to the table holding every image reference the manifest mentions for
    that view. Each epoch draws a fresh substituted pair stream via
    ``sample_pairs``, batches it, and updates both heads plus the logit
    scale with AdamW under the exponential schedule. The final short
    batch is kept; batches of fewer than two pairs carry no contrastive
    signal and are dropped.
    """
    config.validate()
    street_table = base_embeddings["street"]
    sat_table = base_embeddings["satellite"]
    drone_table = base_embeddings["drone"]

    d_in = street_table.dim
    for name, table in (("satellite", sat_table), ("drone", drone_table)):
        if table.dim != d_in:
            raise DimMismatchError(f"{name} table dim {table.dim} != street dim {d_in}")
    for loc in manifest.locations:
        for view, table in (("street", street_table), ("satellite", sat_table), ("drone", drone_table)):
            for ref in getattr(loc, view):
                if ref not in table:
                    raise MissingEmbeddingError(f"{view} image {ref!r} has no embedding")

    model = init_model(d_in, config.d_out, config.seed)
    params = _model_params(model)
    state = OptimizerState()

    epoch_losses: list[float] = []
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config.lr0, config.gamma)
        pairs = sample_pairs(manifest, config.p_drone, config.seed, epoch)
        loss_sum = 0.0
        pair_count = 0
        for start in range(0, len(pairs), config.batch_size):
            batch = pairs[start : start + config.batch_size]
            if len(batch) < 2:
                continue
            X = np.stack([street_table[p.query_image] for p in batch]).astype(np.float64)
            Y = np.stack(
                [
                    (drone_table if p.substituted else sat_table)[p.reference_image]
                    for p in batch
                ]
            ).astype(np.float64)

            z_street = X @ params["street_w"].T + params["street_b"]
            z_ref = Y @ params["sat_w"].T + params["sat_b"]
            norms_s = np.linalg.norm(z_street, axis=1, keepdims=True)
            norms_r = np.linalg.norm(z_ref, axis=1, keepdims=True)
            if np.any(norms_s == 0.0) or np.any(norms_r == 0.0):
                raise ZeroVectorError("a projection collapsed to zero during training")
            U = z_street / norms_s
            V = z_ref / norms_r

            try:
                result = info_nce_loss(
                    U, V, float(params["logit_scale"]), config.label_smoothing
                )
            except NonFiniteLossError as exc:
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}") from exc
            loss_sum += result.loss * len(batch)
            pair_count += len(batch)

            g_z_street = _norm_backward(z_street, U, result.grad_street)
            g_z_ref = _norm_backward(z_ref, V, result.grad_ref)
            grads = {
                "street_w": g_z_street.T @ X,
                "street_b": g_z_street.sum(axis=0),
                "sat_w": g_z_ref.T @ Y,
                "sat_b": g_z_ref.sum(axis=0),
                "logit_scale": np.asarray(result.grad_logit_scale),
            }
            params, state = adamw_step(
                params,
                grads,
                state,
                lr,
                weight_decay=config.weight_decay,
                decay_params={"street_w", "sat_w"},  # biases and the scale are not decayed
            )
            params["logit_scale"] = np.minimum(params["logit_scale"], MAX_LOGIT_SCALE)

        epoch_losses.append(loss_sum / pair_count if pair_count else math.nan)

    return TrainResult(model=_params_to_model(params), epoch_losses=epoch_losses)


_MODEL_HEADER = struct.Struct("<HHII")  # version, reserved, d_in, d_out


def save_model(model: ProjectionModel, path) -> None:
    """Write a CVGM checkpoint (float32, little-endian)."""
    d_in, d_out = model.d_in, model.d_out
    with open(path, "wb") as f:
        f.write(MODEL_MAGIC)
        f.write(_MODEL_HEADER.pack(MODEL_FORMAT_VERSION, 0, d_in, d_out))
        for arr in (
            model.street_head.weight,
            model.street_head.bias,
            model.sat_head.weight,
            model.sat_head.bias,
        ):
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
        f.write(struct.pack("<f", model.logit_scale))


def load_model(path) -> ProjectionModel:
    """Read a CVGM checkpoint; parameters come back as float64."""
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != MODEL_MAGIC:
        raise BadMagicError(f"{path}: not a CVGM model file")
    if len(blob) < 4 + _MODEL_HEADER.size:
        raise TruncatedFileError(f"{path}: header is incomplete")
    version, reserved, d_in, d_out = _MODEL_HEADER.unpack_from(blob, 4)
    if version != MODEL_FORMAT_VERSION:
        raise UnsupportedVersionError(f"{path}: format version {version} is not supported")
    if reserved != 0:
        raise UnsupportedVersionError(f"{path}: reserved header field is nonzero")

    offset = 4 + _MODEL_HEADER.size
    expected = 4 * (2 * (d_out * d_in + d_out) + 1)
    if len(blob) - offset != expected:
        raise TruncatedFileError(
            f"{path}: payload is {len(blob) - offset} bytes, expected {expected}"
        )

    def take(count: int, shape: tuple[int, ...]) -> np.ndarray:
        nonlocal offset
        arr = np.frombuffer(blob, dtype="<f4", count=count, offset=offset)
        offset += 4 * count
        return arr.astype(np.float64).reshape(shape)

    street_w = take(d_out * d_in, (d_out, d_in))
    street_b = take(d_out, (d_out,))
    sat_w = take(d_out * d_in, (d_out, d_in))
    sat_b = take(d_out, (d_out,))
    (logit_scale,) = struct.unpack_from("<f", blob, offset)
    return ProjectionModel(
        street_head=LinearHead(street_w, street_b),
        sat_head=LinearHead(sat_w, sat_b),
        logit_scale=float(logit_scale),
    )
