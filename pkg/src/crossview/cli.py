"""Command-line entry point: one binary, one subcommand per stage.

Every subcommand accepts ``--config file`` (JSON or TOML); explicit
flags always win over config values. Exit codes: 0 success, 2 usage,
3 data/configuration error, 4 transport error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import __version__
from .config import PipelineConfig, load_config
from .dataset import load_manifest
from .embedding import (
    EMBEDDING_FORMAT_VERSION,
    EmbeddingTable,
    load_image,
    read_embeddings,
    toy_embed,
    write_embeddings,
)
from .errors import DataError, EngineError, TransportError
from .evaluation import (
    compare_runs,
    load_truth,
    percent,
    recall_at_k,
    run_pipeline,
    write_report,
)
from .index import build_index, query_topk_batch, read_rankings_jsonl, write_rankings_jsonl
from .mock_vlm import MODES, MockVlmServer
from .rerank import VlmClient, jobs_from_rankings, rerank_batch, write_outcomes_jsonl
from .trainer import (
    MODEL_FORMAT_VERSION,
    TrainConfig,
    load_model,
    project_table,
    save_model,
    train,
)

VIEWS = ("street", "satellite", "drone")


def _status(message: str) -> None:
    print(message, file=sys.stderr)


def _need(value, what: str):
    if value is None:
        raise DataError(f"{what} required (flag or config)")
    return value


def _parse_ks(value) -> list[int]:
    if isinstance(value, list):
        ks = value
    else:
        try:
            ks = [int(part) for part in str(value).split(",") if part.strip()]
        except ValueError:
            raise DataError(f"cannot parse K list {value!r}; expected e.g. 1,5,10")
    if not ks or any(k < 1 for k in ks):
        raise DataError(f"K values must be positive integers, got {ks}")
    return ks


def _config_for(args) -> PipelineConfig:
    return load_config(args.config) if args.config else PipelineConfig()


def cmd_embed(args) -> int:
    cfg = _config_for(args)
    manifest = load_manifest(_need(args.manifest or cfg.manifest, "--manifest"))
    grid = args.grid if args.grid is not None else cfg.embed_grid
    by_view = {"street": cfg.street_emb, "satellite": cfg.sat_emb, "drone": cfg.drone_emb}
    out = _need(args.out or by_view[args.view], "--out")

    entries = {}
    for ref in manifest.image_refs(args.view):
        entries[ref] = toy_embed(load_image(manifest.resolve(ref)), grid=grid)
    table = EmbeddingTable(entries, dim=3 * grid * grid)
    write_embeddings(table, out)
    _status(f"embedded {len(table)} {args.view} images (dim {table.dim}) -> {out}")
    return 0


def cmd_train(args) -> int:
    cfg = _config_for(args)
    base = cfg.train if cfg.train is not None else TrainConfig(seed=cfg.seed, d_out=64)

    def pick(flag, fallback):
        return flag if flag is not None else fallback

    train_config = TrainConfig(
        seed=pick(args.seed, base.seed),
        d_out=pick(args.d_out, base.d_out),
        epochs=pick(args.epochs, base.epochs),
        batch_size=pick(args.batch, base.batch_size),
        lr0=pick(args.lr, base.lr0),
        gamma=pick(args.gamma, base.gamma),
        p_drone=pick(args.p_drone, base.p_drone),
        weight_decay=pick(args.weight_decay, base.weight_decay),
        label_smoothing=pick(args.label_smoothing, base.label_smoothing),
    )

    manifest = load_manifest(_need(args.manifest or cfg.manifest, "--manifest"))
    street = read_embeddings(_need(args.street_emb or cfg.street_emb, "--street-emb"))
    satellite = read_embeddings(_need(args.sat_emb or cfg.sat_emb, "--sat-emb"))
    drone_path = args.drone_emb or cfg.drone_emb
    drone = (
        read_embeddings(drone_path)
        if drone_path and Path(drone_path).is_file()
        else EmbeddingTable({}, dim=street.dim)
    )
    out = _need(args.out or cfg.model, "--out")

    result = train(
        manifest,
        {"street": street, "satellite": satellite, "drone": drone},
        train_config,
    )
    for epoch, loss in enumerate(result.epoch_losses):
        _status(f"epoch {epoch:3d}  loss {loss:.6f}")
    save_model(result.model, out)
    _status(f"model (d_in {result.model.d_in} -> d_out {result.model.d_out}) -> {out}")
    return 0


def cmd_retrieve(args) -> int:
    cfg = _config_for(args)
    index_table = read_embeddings(_need(args.index or cfg.sat_emb, "--index"))
    query_table = read_embeddings(_need(args.queries or cfg.street_emb, "--queries"))
    model_path = args.model or cfg.model
    if model_path is not None:
        if not Path(model_path).is_file():
            raise DataError(f"model checkpoint not found: {model_path}")
        model = load_model(model_path)
        query_table = project_table(model.street_head, query_table)
        index_table = project_table(model.sat_head, index_table)

    manifest_path = args.manifest or cfg.manifest
    if manifest_path is not None:
        query_ids = load_manifest(manifest_path).image_refs("street")
    else:
        query_ids = sorted(query_table.ids())

    k = args.k if args.k is not None else cfg.k
    index = build_index(index_table)
    rankings = query_topk_batch(index, query_table, k, query_ids=query_ids)
    out = _need(args.out, "--out")
    write_rankings_jsonl(rankings, out)
    _status(f"ranked {len(rankings)} queries over {len(index)} references -> {out}")
    return 0


def cmd_rerank(args) -> int:
    cfg = _config_for(args)
    rankings = read_rankings_jsonl(_need(args.rankings, "--rankings"))
    root = None
    manifest_path = args.manifest or cfg.manifest
    if manifest_path is not None:
        root = load_manifest(manifest_path).root
    truth = load_truth(args.truth) if args.truth else None

    k = args.k if args.k is not None else cfg.rerank_k
    concurrency = args.concurrency if args.concurrency is not None else cfg.concurrency
    retries = args.retries if args.retries is not None else cfg.retries
    timeout = args.timeout if args.timeout is not None else cfg.timeout
    model_name = args.model if args.model is not None else cfg.model_name
    out = _need(args.out, "--out")

    mock = args.mock or cfg.mock_mode
    server = None
    try:
        endpoint = args.endpoint or cfg.endpoint
        if mock is not None:
            server = MockVlmServer(mode=mock, truth=truth).start()
            endpoint = server.endpoint
        client = VlmClient(
            _need(endpoint, "--endpoint (or --mock)"),
            model_name,
            timeout=timeout,
            retries=retries,
        )
        jobs = jobs_from_rankings(rankings, root, k=k)
        outcomes = rerank_batch(client, jobs, k=k, concurrency=concurrency)
    finally:
        if server is not None:
            server.stop()

    write_outcomes_jsonl(outcomes, out)
    used = sum(1 for o in outcomes if o.used_vlm)
    _status(f"re-ranked {used}/{len(outcomes)} queries via VLM -> {out}")
    # Per-query transport failures degrade to the original order, but an
    # endpoint no query could reach is an operational error worth a
    # distinct exit code. The fallback file is already on disk.
    if outcomes and all(
        o.failure is not None and o.failure.startswith("transport") for o in outcomes
    ):
        raise TransportError(f"all {len(outcomes)} rerank requests failed to reach {endpoint}")
    return 0


def cmd_eval(args) -> int:
    cfg = _config_for(args)
    rankings = read_rankings_jsonl(_need(args.rankings, "--rankings"))
    truth = load_truth(_need(args.truth or cfg.truth, "--truth"))
    ks = _parse_ks(args.ks) if args.ks is not None else cfg.ks
    report = recall_at_k(rankings, truth, ks)
    if args.out:
        write_report(report, args.out)
        _status(f"report -> {args.out}")
    for k in ks:
        print(f"R@{k} {percent(report.recall[k])}")
    return 0


def cmd_pipeline(args) -> int:
    cfg = _config_for(args)
    if args.manifest is not None:
        cfg.manifest = Path(args.manifest)
    if args.street_emb is not None:
        cfg.street_emb = Path(args.street_emb)
    if args.sat_emb is not None:
        cfg.sat_emb = Path(args.sat_emb)
    if args.model is not None:
        cfg.model = Path(args.model)
    if args.out_dir is not None:
        cfg.out_dir = Path(args.out_dir)
    if args.truth is not None:
        cfg.truth = Path(args.truth)
    if args.grid is not None:
        cfg.embed_grid = args.grid
    if args.seed is not None:
        cfg.seed = args.seed
    if args.k is not None:
        cfg.k = args.k
    if args.rerank_k is not None:
        cfg.rerank_k = args.rerank_k
    if args.ks is not None:
        cfg.ks = _parse_ks(args.ks)
    if args.endpoint is not None:
        cfg.endpoint = args.endpoint
    if args.model_name is not None:
        cfg.model_name = args.model_name
    if args.concurrency is not None:
        cfg.concurrency = args.concurrency
    if args.mock is not None:
        cfg.mock_mode = args.mock

    pre, post = run_pipeline(cfg)
    text, _ = compare_runs([("retrieval", pre), ("reranked", post)])
    print(text, end="")
    _status(f"artifacts -> {cfg.out_dir}")
    return 0


def cmd_mock_serve(args) -> int:
    truth = load_truth(args.truth) if args.truth else None
    try:
        server = MockVlmServer(
            mode=args.mode, port=args.port, truth=truth, slow_delay=args.delay
        )
    except OSError as exc:
        raise TransportError(f"cannot bind port {args.port}: {exc}")
    _status(f"mock VLM ({args.mode}) listening on {server.endpoint}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="crossview",
        description="Two-stage street-to-satellite geo-localisation engine",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=(
            f"crossview {__version__} "
            f"(embedding format v{EMBEDDING_FORMAT_VERSION}, "
            f"model format v{MODEL_FORMAT_VERSION})"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="JSON or TOML config file; flags override it")
        return p

    p = add("embed", cmd_embed, "toy-embed one view's images to a CVGE file")
    p.add_argument("--manifest")
    p.add_argument("--view", choices=VIEWS, default="street")
    p.add_argument("--grid", type=int)
    p.add_argument("--out")

    p = add("train", cmd_train, "train the projection heads on base embeddings")
    p.add_argument("--manifest")
    p.add_argument("--street-emb", dest="street_emb")
    p.add_argument("--sat-emb", dest="sat_emb")
    p.add_argument("--drone-emb", dest="drone_emb")
    p.add_argument("--p-drone", dest="p_drone", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--d-out", dest="d_out", type=int)
    p.add_argument("--weight-decay", dest="weight_decay", type=float)
    p.add_argument("--label-smoothing", dest="label_smoothing", type=float)
    p.add_argument("--out")

    p = add("retrieve", cmd_retrieve, "top-K cosine retrieval to a rankings file")
    p.add_argument("--model", help="CVGM checkpoint; omit to use raw embeddings")
    p.add_argument("--index", help="reference CVGE file")
    p.add_argument("--queries", help="query CVGE file")
    p.add_argument("--manifest", help="restrict queries to this manifest's street refs")
    p.add_argument("--k", type=int)
    p.add_argument("--out")

    p = add("rerank", cmd_rerank, "re-rank candidate heads through a VLM endpoint")
    p.add_argument("--rankings")
    p.add_argument("--manifest")
    p.add_argument("--endpoint")
    p.add_argument("--model", help="VLM model name")
    p.add_argument("--k", type=int)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--retries", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--mock", choices=MODES, help="serve this mock mode in-process")
    p.add_argument("--truth", help="ground-truth sidecar for the oracle mock")
    p.add_argument("--out")

    p = add("eval", cmd_eval, "Recall@K over a rankings file")
    p.add_argument("--rankings")
    p.add_argument("--truth")
    p.add_argument("--ks", help="comma-separated K values, e.g. 1,5,10")
    p.add_argument("--out")

    p = add("pipeline", cmd_pipeline, "embed, retrieve, re-rank, and evaluate in one go")
    p.add_argument("--manifest")
    p.add_argument("--street-emb", dest="street_emb")
    p.add_argument("--sat-emb", dest="sat_emb")
    p.add_argument("--model")
    p.add_argument("--out-dir", dest="out_dir")
    p.add_argument("--truth")
    p.add_argument("--grid", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--rerank-k", dest="rerank_k", type=int)
    p.add_argument("--ks")
    p.add_argument("--endpoint")
    p.add_argument("--model-name", dest="model_name")
    p.add_argument("--concurrency", type=int)
    p.add_argument("--mock", choices=MODES)

    p = sub.add_parser("mock-serve", help="run the mock VLM server in the foreground")
    p.set_defaults(func=cmd_mock_serve)
    p.add_argument("--mode", choices=MODES, default="identity")
    p.add_argument("--port", type=int, default=8041)
    p.add_argument("--truth")
    p.add_argument("--delay", type=float, default=2.0)

    return parser


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except EngineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def entrypoint() -> None:
    sys.exit(main(sys.argv[1:]))
