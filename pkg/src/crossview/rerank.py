"""Candidate re-ranking through a vision-language model over HTTP.

One POST per query carries the instruction prompt, the query image,
and the top-K candidate images (base64), plus a JSON schema the server
must follow. The response is a permutation of 1..K and a justification
for the top choice. Any failure at any layer (transport, HTTP status,
malformed body) degrades to the original retrieval order, so the stage
is total: every query always yields a valid ranked list.

The API credential is read from the CROSSVIEW_VLM_API_KEY environment
variable, never from a flag or config file.
"""

from __future__ import annotations

import base64
import json
import mimetypes
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import requests

from .errors import LengthMismatchError, ParseFailure, TransportError
from .index import RankedList, ranking_to_obj

API_KEY_ENV_VAR = "CROSSVIEW_VLM_API_KEY"
RERANK_PATH = "/v1/rerank"
DEFAULT_TIMEOUT = 30.0
DEFAULT_CONCURRENCY = 4

# The ranking instruction given to the VLM, instantiated per candidate
# count. The [1–k] range uses an en dash. Byte-stable for fixed k.
PROMPT_TEMPLATE = (
    "Given one ground image and {k} satellite images, identify which satellite "
    "image matches the ground location. Summarise the ground image and each "
    "satellite image, focusing on key features (streets, buildings, etc.). "
    "Then, compare the ground image with each satellite image as well as the "
    "summarisation. Rank these {k} satellite images by likelihood [1–{k}]. "
    "Justify the top choice with matching features and estimated camera position."
)


def build_prompt(k: int) -> str:
    """Instantiate the ranking instruction for k candidates."""
    if k < 1:
        raise ValueError(f"k must be a positive integer, got {k}")
    return PROMPT_TEMPLATE.format(k=k)


def response_schema(k: int) -> dict:
    """JSON schema the server is asked to follow: permutation + justification."""
    return {
        "type": "object",
        "properties": {
            "ranking": {
                "type": "array",
                "items": {"type": "integer", "minimum": 1, "maximum": k},
                "minItems": k,
                "maxItems": k,
            },
            "justification": {"type": "string", "minLength": 1},
        },
        "required": ["ranking", "justification"],
    }


@dataclass
class ImagePayload:
    role: str  # "query" or "candidate"
    media_type: str
    data: str  # base64
    candidate_index: int | None = None  # 1-based, candidates only


@dataclass
class RerankRequest:
    model_name: str
    prompt: str
    images: list[ImagePayload]
    temperature: float = 0.0
    max_thinking_tokens: int = 1024

    def validate(self) -> None:
        queries = [img for img in self.images if img.role == "query"]
        candidates = [img for img in self.images if img.role == "candidate"]
        if len(queries) != 1:
            raise ValueError(f"request must carry exactly one query image, got {len(queries)}")
        indices = [img.candidate_index for img in candidates]
        if indices != list(range(1, len(candidates) + 1)):
            raise ValueError("candidate images must be numbered 1..K in order")

    def to_obj(self) -> dict:
        k = sum(1 for img in self.images if img.role == "candidate")
        return {
            "model_name": self.model_name,
            "temperature": self.temperature,
            "max_thinking_tokens": self.max_thinking_tokens,
            "prompt": self.prompt,
            "images": [
                {
                    "role": img.role,
                    "candidate_index": img.candidate_index,
                    "media_type": img.media_type,
                    "data": img.data,
                }
                for img in self.images
            ],
            "response_schema": response_schema(k),
        }


@dataclass
class RerankResponse:
    ranking: list[int]
    justification: str


def parse_response(body: str, k: int) -> RerankResponse:
    """Validate a raw response body against the k-candidate contract.

    Raises ParseFailure with a machine-readable reason: NOT_JSON for
    undecodable bodies, MISSING_FIELD for absent/empty fields,
    WRONG_LENGTH for a ranking of the wrong size (checked before
    membership), NOT_PERMUTATION for anything that is not a permutation
    of 1..k (duplicates, out-of-range, or non-integer entries).
    """
    try:
        obj = json.loads(body)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseFailure(ParseFailure.NOT_JSON, f"response is not JSON: {exc}")
    if not isinstance(obj, dict):
        raise ParseFailure(ParseFailure.MISSING_FIELD, "response is not a JSON object")
    if "ranking" not in obj:
        raise ParseFailure(ParseFailure.MISSING_FIELD, "response lacks 'ranking'")
    if "justification" not in obj:
        raise ParseFailure(ParseFailure.MISSING_FIELD, "response lacks 'justification'")
    justification = obj["justification"]
    if not isinstance(justification, str) or not justification:
        raise ParseFailure(ParseFailure.MISSING_FIELD, "'justification' must be a non-empty string")
    ranking = obj["ranking"]
    if not isinstance(ranking, list):
        raise ParseFailure(ParseFailure.NOT_PERMUTATION, "'ranking' must be an array")
    if len(ranking) != k:
        raise ParseFailure(
            ParseFailure.WRONG_LENGTH, f"'ranking' has {len(ranking)} entries, expected {k}"
        )
    for entry in ranking:
        if isinstance(entry, bool) or not isinstance(entry, int):
            raise ParseFailure(ParseFailure.NOT_PERMUTATION, f"non-integer rank entry {entry!r}")
    if sorted(ranking) != list(range(1, k + 1)):
        raise ParseFailure(ParseFailure.NOT_PERMUTATION, f"{ranking} is not a permutation of 1..{k}")
    return RerankResponse(ranking=[int(r) for r in ranking], justification=justification)


def apply_rerank(original: RankedList, response: RerankResponse) -> RankedList:
    """Permute the head of a ranked list per the response; the tail is kept.

    output[i] = original[ranking[i] - 1] for i < K; positions past K are
    untouched, so the candidate id set is conserved exactly.
    """
    k = len(response.ranking)
    if len(original.entries) < k:
        raise LengthMismatchError(
            f"ranking covers {k} candidates but the list has only {len(original.entries)}"
        )
    head = [original.entries[r - 1] for r in response.ranking]
    return RankedList(query_id=original.query_id, entries=head + original.entries[k:])


@dataclass
class RerankOutcome:
    final: RankedList
    used_vlm: bool
    justification: str | None = None
    failure: str | None = None


class VlmClient:
    """Thin POST client for the re-rank endpoint.

    ``retries`` is the number of additional attempts after the first,
    applied to transport errors and 5xx statuses only; malformed bodies
    are never retried. The bearer credential, if present in the
    environment, rides in the Authorization header.
    """

    def __init__(
        self,
        endpoint: str,
        model_name: str,
        timeout: float = DEFAULT_TIMEOUT,
        retries: int = 0,
    ):
        self.endpoint = endpoint.rstrip("/")
        self.model_name = model_name
        self.timeout = timeout
        self.retries = retries

    def post(self, request: RerankRequest) -> tuple[int, str]:
        """Send one request; returns (status, body). TransportError if the
        network fails on every attempt."""
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(API_KEY_ENV_VAR)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        body = json.dumps(request.to_obj())
        last_exc: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = requests.post(
                    self.endpoint + RERANK_PATH,
                    data=body,
                    headers=headers,
                    timeout=self.timeout,
                )
            except requests.RequestException as exc:
                last_exc = exc
                continue
            if resp.status_code >= 500 and attempt < self.retries:
                continue
            return resp.status_code, resp.text
        raise TransportError(f"request to {self.endpoint} failed: {last_exc}")


def rerank_query(
    client: VlmClient,
    query_image: ImagePayload,
    original: RankedList,
    candidate_images: list[ImagePayload],
    k: int = 10,
) -> RerankOutcome:
    """Re-rank one query's head through the VLM, falling back on any failure.

    K shrinks to the candidate count when the list is shorter than k.
    The outcome always holds a valid ranked list over the same ids.
    """
    k_eff = min(k, len(original.entries))
    if len(candidate_images) != k_eff:
        raise LengthMismatchError(
            f"{len(candidate_images)} candidate images for a head of {k_eff}"
        )
    if k_eff == 0:
        return RerankOutcome(final=original, used_vlm=False, failure="no candidates")

    images = [query_image]
    for i, img in enumerate(candidate_images, start=1):
        images.append(
            ImagePayload(
                role="candidate",
                media_type=img.media_type,
                data=img.data,
                candidate_index=i,
            )
        )
    request = RerankRequest(
        model_name=client.model_name, prompt=build_prompt(k_eff), images=images
    )
    request.validate()

    try:
        status, body = client.post(request)
    except TransportError as exc:
        return RerankOutcome(final=original, used_vlm=False, failure=f"transport: {exc}")
    if not 200 <= status < 300:
        return RerankOutcome(final=original, used_vlm=False, failure=f"http {status}")
    try:
        response = parse_response(body, k_eff)
    except ParseFailure as exc:
        return RerankOutcome(final=original, used_vlm=False, failure=f"parse: {exc.reason}")
    return RerankOutcome(
        final=apply_rerank(original, response),
        used_vlm=True,
        justification=response.justification,
    )


@dataclass
class RerankJob:
    query_image: ImagePayload
    original: RankedList
    candidate_images: list[ImagePayload] = field(default_factory=list)


def rerank_batch(
    client: VlmClient,
    jobs: list[RerankJob],
    k: int = 10,
    concurrency: int = DEFAULT_CONCURRENCY,
) -> list[RerankOutcome]:
    """Run rerank_query over jobs with bounded parallelism.

    Outcomes come back in job order regardless of completion order.
    """
    if concurrency < 1:
        raise ValueError(f"concurrency must be positive, got {concurrency}")
    outcomes: list[RerankOutcome | None] = [None] * len(jobs)
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = {
            pool.submit(
                rerank_query, client, job.query_image, job.original, job.candidate_images, k
            ): pos
            for pos, job in enumerate(jobs)
        }
        for future, pos in futures.items():
            outcomes[pos] = future.result()
    return outcomes  # type: ignore[return-value]


def payload_for_ref(
    root: Path | None, ref: str, role: str, candidate_index: int | None = None
) -> ImagePayload:
    """Build the wire payload for an image reference.

    When the reference resolves to a real file under ``root``, its bytes
    are sent with a sniffed media type. References without a backing
    file (synthetic datasets) are sent as UTF-8 text payloads carrying
    the reference string itself, which the mock server's oracle mode can
    decode.
    """
    path = Path(root, ref) if root is not None else Path(ref)
    if path.is_file():
        media_type = mimetypes.guess_type(ref)[0] or "application/octet-stream"
        raw = path.read_bytes()
    else:
        media_type = "text/plain"
        raw = ref.encode("utf-8")
    return ImagePayload(
        role=role,
        media_type=media_type,
        data=base64.b64encode(raw).decode("ascii"),
        candidate_index=candidate_index,
    )


def jobs_from_rankings(
    rankings: list[RankedList], root: Path | None, k: int = 10
) -> list[RerankJob]:
    """Assemble per-query jobs: query payload plus head-of-list candidates."""
    jobs = []
    for ranking in rankings:
        k_eff = min(k, len(ranking.entries))
        jobs.append(
            RerankJob(
                query_image=payload_for_ref(root, ranking.query_id, "query"),
                original=ranking,
                candidate_images=[
                    payload_for_ref(root, ref_id, "candidate", i + 1)
                    for i, (ref_id, _) in enumerate(ranking.entries[:k_eff])
                ],
            )
        )
    return jobs


def outcome_to_obj(outcome: RerankOutcome) -> dict:
    """Rankings-file record plus the re-rank bookkeeping fields."""
    obj = ranking_to_obj(outcome.final)
    obj["justification"] = outcome.justification
    obj["used_vlm"] = outcome.used_vlm
    if outcome.failure is not None:
        obj["failure"] = outcome.failure
    return obj


def write_outcomes_jsonl(outcomes: list[RerankOutcome], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for outcome in outcomes:
            f.write(json.dumps(outcome_to_obj(outcome), separators=(",", ":")))
            f.write("\n")
