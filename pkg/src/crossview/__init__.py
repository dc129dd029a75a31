"""Two-stage cross-view geo-localisation engine.

Stage I ranks geo-tagged satellite references against a street-level
query by cosine similarity of learned embeddings (contrastive linear
heads over frozen base features). Stage II re-ranks the head of each
candidate list through a vision-language model speaking a small HTTP
contract, with total fallback to the retrieval order. Recall@K scoring
and a deterministic end-to-end pipeline tie the stages together.
"""

__version__ = "0.1.0"

from .dataset import (
    LocationRecord,
    Manifest,
    TrainingPair,
    load_manifest,
    sample_pairs,
    save_manifest,
)
from .embedding import (
    EmbeddingTable,
    Image,
    l2_normalize,
    load_image,
    read_embeddings,
    toy_embed,
    write_embeddings,
)
from .errors import (
    DataError,
    EngineError,
    ParseFailure,
    TransportError,
)
from .evaluation import (
    RecallReport,
    compare_runs,
    derive_truth,
    load_truth,
    recall_at_k,
    run_pipeline,
)
from .index import (
    RankedList,
    RetrievalIndex,
    build_index,
    query_topk,
    query_topk_batch,
    read_rankings_jsonl,
    write_rankings_jsonl,
)
from .mock_vlm import MockVlmServer
from .rerank import (
    RerankOutcome,
    RerankRequest,
    RerankResponse,
    VlmClient,
    apply_rerank,
    build_prompt,
    parse_response,
    rerank_batch,
    rerank_query,
)
from .synthetic import SyntheticDataset, make_synthetic_dataset
from .trainer import (
    LinearHead,
    OptimizerState,
    ProjectionModel,
    TrainConfig,
    TrainResult,
    adamw_step,
    forward,
    info_nce_loss,
    init_model,
    load_model,
    lr_at,
    project_table,
    save_model,
    train,
)
from .config import PipelineConfig, load_config
