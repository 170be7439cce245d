"""LLM and embedding backends behind one narrow interface.

Two implementations: a deterministic fixture-driven mock for offline runs
and tests, and an HTTP client for OpenAI-compatible endpoints.  Every
pipeline stage that needs a model goes through ``Provider.complete`` /
``Provider.embed``; nothing else in the package talks to a network.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import string
import threading
import time
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Callable, Optional

import numpy as np

from .errors import (
    ConfigError,
    FixtureMissError,
    ProviderParseError,
    TransportError,
)
from .graph import TextChunk

logger = logging.getLogger(__name__)

TASK_KINDS = (
    "ner",
    "same_judge",
    "relation_gen",
    "entity_judge",
    "relation_judge",
    "fact_judge",
)

# Fixture records may carry this key instead of a result to simulate an
# unparseable model reply in offline tests.
PARSE_FAILURE_KEY = "__parse_failure__"

ENV_ENDPOINT = "RAKG_ENDPOINT"
ENV_API_KEY = "RAKG_API_KEY"
ENV_MODEL = "RAKG_MODEL"
ENV_EMBED_MODEL = "RAKG_EMBED_MODEL"


@dataclass(frozen=True)
class LlmRequest:
    """One model call: a task kind plus structured prompt fields."""

    task_kind: str
    payload: dict[str, Any]
    temperature: float = 0.0

    def __post_init__(self):
        if self.task_kind not in TASK_KINDS:
            raise ConfigError(f"unknown task_kind {self.task_kind!r}")


@dataclass
class LlmResponse:
    """Structured result for a request, or a parse-failure marker."""

    task_kind: str
    result: Optional[dict[str, Any]]
    raw_text: str
    parse_failed: bool = False


def canonical_payload_json(payload: dict[str, Any]) -> str:
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def payload_key(payload: dict[str, Any]) -> str:
    """Stable short key for a request payload."""
    digest = hashlib.sha256(canonical_payload_json(payload).encode("utf-8")).hexdigest()
    return digest[:16]


# --- result schemas ----------------------------------------------------------


def _as_clean_str(value: Any) -> str:
    return value.strip() if isinstance(value, str) else ""


def validate_result(task_kind: str, obj: Any) -> dict[str, Any]:
    """Normalize a raw result object against the task's output schema.

    Raises ProviderParseError when the container shape is wrong; silently
    drops malformed list entries (an LLM emitting one bad record should not
    void the good ones).
    """
    if not isinstance(obj, dict):
        raise ProviderParseError(f"{task_kind}: result must be an object")
    if task_kind == "ner":
        entries = obj.get("entities")
        if not isinstance(entries, list):
            raise ProviderParseError("ner: missing 'entities' list")
        out = []
        for entry in entries:
            if not isinstance(entry, dict):
                continue
            name = _as_clean_str(entry.get("name"))
            if not name:
                continue
            out.append(
                {
                    "name": name,
                    "type": _as_clean_str(entry.get("type")),
                    "description": _as_clean_str(entry.get("description")),
                }
            )
        return {"entities": out}
    if task_kind == "same_judge":
        same = obj.get("same")
        if not isinstance(same, bool):
            raise ProviderParseError("same_judge: 'same' must be a boolean")
        return {"same": same}
    if task_kind == "relation_gen":
        entries = obj.get("triples")
        if not isinstance(entries, list):
            raise ProviderParseError("relation_gen: missing 'triples' list")
        out = []
        for entry in entries:
            if not isinstance(entry, dict):
                continue
            relation = _as_clean_str(entry.get("relation"))
            tail_kind = entry.get("tail_kind")
            tail_value = _as_clean_str(entry.get("tail_value"))
            if not relation or not tail_value or tail_kind not in ("entity", "literal"):
                continue
            out.append({"relation": relation, "tail_kind": tail_kind, "tail_value": tail_value})
        return {"triples": out}
    if task_kind in ("entity_judge", "relation_judge"):
        score = obj.get("score")
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise ProviderParseError(f"{task_kind}: 'score' must be a number")
        if not 0.0 <= float(score) <= 1.0:
            raise ProviderParseError(f"{task_kind}: score {score} outside [0, 1]")
        return {"score": float(score)}
    if task_kind == "fact_judge":
        inferable = obj.get("inferable")
        if not isinstance(inferable, bool):
            raise ProviderParseError("fact_judge: 'inferable' must be a boolean")
        return {"inferable": inferable}
    raise ConfigError(f"unknown task_kind {task_kind!r}")


# --- request builders ---------------------------------------------------------
#
# The mock provider keys fixtures on these payloads, so anything that issues
# requests (pipeline, evaluation, fixture tooling) must build them here.


def _entity_view(entity: Any) -> dict[str, str]:
    return {
        "name": entity.name,
        "type": entity.entity_type,
        "description": entity.description,
    }


def _chunk_view(chunk: TextChunk) -> dict[str, str]:
    return {"chunk_id": chunk.chunk_id, "text": chunk.text}


def ner_request(chunk: TextChunk) -> LlmRequest:
    return LlmRequest("ner", {"chunk_id": chunk.chunk_id, "text": chunk.text})


def same_judge_request(a: Any, b: Any) -> LlmRequest:
    return LlmRequest("same_judge", {"a": _entity_view(a), "b": _entity_view(b)})


def relation_gen_request(
    entity: Any, texts: list[TextChunk], subgraph_view: dict[str, Any]
) -> LlmRequest:
    return LlmRequest(
        "relation_gen",
        {
            "entity": _entity_view(entity),
            "texts": [_chunk_view(c) for c in texts],
            "subgraph": subgraph_view,
        },
    )


def entity_judge_request(entity: Any, texts: list[TextChunk]) -> LlmRequest:
    return LlmRequest(
        "entity_judge",
        {"entity": _entity_view(entity), "texts": [_chunk_view(c) for c in texts]},
    )


def relation_judge_request(
    triple_view: dict[str, Any], texts: list[TextChunk], subgraph_view: dict[str, Any]
) -> LlmRequest:
    return LlmRequest(
        "relation_judge",
        {
            "triple": triple_view,
            "texts": [_chunk_view(c) for c in texts],
            "subgraph": subgraph_view,
        },
    )


def fact_judge_request(
    fact: str, entity_views: list[dict[str, str]], triple_views: list[dict[str, Any]]
) -> LlmRequest:
    return LlmRequest(
        "fact_judge",
        {"fact": fact, "entities": entity_views, "triples": triple_views},
    )


# --- prompt templates ---------------------------------------------------------


def _load_template(task_kind: str) -> string.Template:
    text = resources.files("rakg.prompts").joinpath(f"{task_kind}.txt").read_text("utf-8")
    return string.Template(text)


def render_prompt(task_kind: str, payload: dict[str, Any]) -> str:
    """Fill the task's template; structured payload fields render as JSON."""
    values = {
        key: value if isinstance(value, str) else json.dumps(value, indent=2, sort_keys=True, ensure_ascii=False)
        for key, value in payload.items()
    }
    return _load_template(task_kind).substitute(values)


def prompts_fingerprint() -> str:
    """Hash of all shipped prompt templates, recorded in run manifests."""
    digest = hashlib.sha256()
    for kind in TASK_KINDS:
        data = resources.files("rakg.prompts").joinpath(f"{kind}.txt").read_bytes()
        digest.update(kind.encode("utf-8"))
        digest.update(data)
    return digest.hexdigest()


# --- deterministic embedding --------------------------------------------------


class HashEmbedder:
    """Hash-seeded character n-gram projection onto a fixed-dimension sphere.

    Each n-gram of the casefolded text is hashed to a signed coordinate and
    the accumulated vector is unit-normalized.  The same string always maps
    to the same vector, and near-identical strings land close together,
    which is what the offline disambiguation and retrieval stages need.
    """

    def __init__(self, dimension: int = 256, ngram: int = 3):
        if dimension < 2:
            raise ConfigError("embedding dimension must be >= 2")
        self.dimension = dimension
        self.ngram = ngram
        self._gram_cache: dict[str, tuple[int, float]] = {}

    def _coordinate(self, gram: str) -> tuple[int, float]:
        cached = self._gram_cache.get(gram)
        if cached is None:
            h = hashlib.sha256(gram.encode("utf-8")).digest()
            idx = int.from_bytes(h[:4], "big") % self.dimension
            sign = 1.0 if h[4] & 1 else -1.0
            cached = (idx, sign)
            self._gram_cache[gram] = cached
        return cached

    def embed_one(self, text: str) -> np.ndarray:
        if not text.strip():
            raise ValueError("cannot embed empty text")
        normalized = " " + " ".join(text.casefold().split()) + " "
        vec = np.zeros(self.dimension, dtype=np.float64)
        if len(normalized) < self.ngram:
            normalized = normalized.ljust(self.ngram)
        for i in range(len(normalized) - self.ngram + 1):
            idx, sign = self._coordinate(normalized[i : i + self.ngram])
            vec[idx] += sign
        norm = float(np.linalg.norm(vec))
        if norm == 0.0:
            vec[0] = 1.0
            return vec
        return vec / norm


# --- providers ----------------------------------------------------------------


class MockProvider:
    """Pure function of (fixtures, request); fails loudly on missing fixtures.

    Fixture layout: one ``<task_kind>.json`` file per task kind inside the
    fixtures directory, each a JSON list of ``{"payload": ..., "response": ...}``
    records.  Lookup is by the canonical hash of the payload.
    """

    name = "mock"

    def __init__(self, fixtures_dir: str | Path | None = None, dimension: int = 256):
        self._embedder = HashEmbedder(dimension=dimension)
        self._fixtures: dict[tuple[str, str], Any] = {}
        self._fixtures_dir = Path(fixtures_dir) if fixtures_dir else None
        self._fixtures_sha256 = "none"
        if self._fixtures_dir is not None:
            self._load_fixtures(self._fixtures_dir)

    @property
    def embedding_dimension(self) -> int:
        return self._embedder.dimension

    def _load_fixtures(self, root: Path) -> None:
        if not root.is_dir():
            raise ConfigError(f"fixtures directory {root} does not exist")
        digest = hashlib.sha256()
        for path in sorted(root.glob("*.json")):
            kind = path.stem
            if kind not in TASK_KINDS:
                raise ConfigError(f"fixture file {path.name} does not match a task kind")
            records = json.loads(path.read_text("utf-8"))
            if not isinstance(records, list):
                raise ConfigError(f"{path.name}: expected a list of fixture records")
            for rec in records:
                payload = rec.get("payload")
                if not isinstance(payload, dict):
                    raise ConfigError(f"{path.name}: fixture record missing 'payload'")
                response = rec.get("response")
                if PARSE_FAILURE_KEY not in rec and response is not None:
                    validate_result(kind, response)  # reject broken fixtures at load
                key = payload_key(payload)
                self._fixtures[(kind, key)] = rec
            digest.update(path.name.encode("utf-8"))
            digest.update(path.read_bytes())
        self._fixtures_sha256 = digest.hexdigest()

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        return [self._embedder.embed_one(t) for t in texts]

    def complete(self, request: LlmRequest) -> LlmResponse:
        key = payload_key(request.payload)
        rec = self._fixtures.get((request.task_kind, key))
        if rec is None:
            preview = canonical_payload_json(request.payload)
            if len(preview) > 400:
                preview = preview[:400] + "..."
            raise FixtureMissError(request.task_kind, key, preview)
        if PARSE_FAILURE_KEY in rec:
            return LlmResponse(request.task_kind, None, str(rec[PARSE_FAILURE_KEY]), parse_failed=True)
        result = validate_result(request.task_kind, rec["response"])
        raw = json.dumps(rec["response"], sort_keys=True, ensure_ascii=False)
        return LlmResponse(request.task_kind, result, raw)

    def fingerprint(self) -> dict[str, Any]:
        return {
            "kind": "mock",
            "embedding_dimension": self.embedding_dimension,
            "fixtures_sha256": self._fixtures_sha256,
            "prompts_sha256": prompts_fingerprint(),
        }


_FENCE_RE = re.compile(r"```(?:json)?\s*(.*?)```", re.DOTALL)

_SYSTEM_MESSAGE = (
    "You are a precise information extraction component. Always reply with "
    "only the requested fenced JSON block."
)

_REPAIR_MESSAGE = (
    "Your previous reply was not a valid fenced JSON block of the requested "
    "shape. Reply again with only the fenced JSON block."
)

_RETRYABLE_STATUS = {429, 500, 502, 503, 504}


def extract_fenced_json(text: str) -> Any:
    """Parse the first fenced JSON block, falling back to the whole reply."""
    match = _FENCE_RE.search(text)
    candidate = match.group(1) if match else text
    try:
        return json.loads(candidate)
    except json.JSONDecodeError as exc:
        raise ProviderParseError(f"model output is not valid JSON: {exc}", raw_text=text) from exc


@dataclass
class HttpProviderConfig:
    """Connection settings for an OpenAI-compatible endpoint."""

    endpoint: str
    model: str
    embed_model: str
    api_key: str = ""
    max_in_flight: int = 4
    max_retries: int = 3
    backoff_base: float = 0.5
    timeout: float = 60.0

    @classmethod
    def from_env(cls) -> HttpProviderConfig:
        endpoint = os.environ.get(ENV_ENDPOINT, "")
        if not endpoint:
            raise ConfigError(f"{ENV_ENDPOINT} is not set")
        model = os.environ.get(ENV_MODEL, "")
        embed_model = os.environ.get(ENV_EMBED_MODEL, "")
        if not model or not embed_model:
            raise ConfigError(f"{ENV_MODEL} and {ENV_EMBED_MODEL} must be set")
        return cls(
            endpoint=endpoint,
            model=model,
            embed_model=embed_model,
            api_key=os.environ.get(ENV_API_KEY, ""),
        )


class HttpProvider:
    """Chat-completion + embeddings client for OpenAI-compatible servers.

    One chat call per request, with task-specific output-format instructions
    baked into the prompt templates.  Transport failures are retried with
    exponential backoff; an unparseable reply gets one repair reprompt before
    the response is marked as a parse failure.
    """

    name = "http"

    def __init__(
        self,
        config: HttpProviderConfig,
        transport: Any = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        import httpx

        self.config = config
        self._sleep = sleep
        headers = {"Content-Type": "application/json"}
        if config.api_key:
            headers["Authorization"] = f"Bearer {config.api_key}"
        self._client = httpx.Client(
            base_url=config.endpoint.rstrip("/"),
            headers=headers,
            timeout=config.timeout,
            transport=transport,
        )
        self._semaphore = threading.Semaphore(config.max_in_flight)
        self._dimension: Optional[int] = None

    @property
    def embedding_dimension(self) -> Optional[int]:
        return self._dimension

    def _post(self, path: str, body: dict[str, Any]) -> dict[str, Any]:
        import httpx

        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                self._sleep(self.config.backoff_base * (2 ** (attempt - 1)))
            try:
                with self._semaphore:
                    response = self._client.post(path, json=body)
            except httpx.TransportError as exc:
                last_error = exc
                logger.warning("transport error on %s (attempt %d): %s", path, attempt + 1, exc)
                continue
            if response.status_code in _RETRYABLE_STATUS:
                last_error = TransportError(f"{path} returned {response.status_code}")
                logger.warning("%s returned %d (attempt %d)", path, response.status_code, attempt + 1)
                continue
            if response.status_code >= 400:
                raise TransportError(
                    f"{path} returned {response.status_code}: {response.text[:200]}",
                    retryable=False,
                )
            return response.json()
        raise TransportError(f"{path} failed after {self.config.max_retries + 1} attempts: {last_error}")

    def embed(self, texts: list[str]) -> list[np.ndarray]:
        for t in texts:
            if not t.strip():
                raise ValueError("cannot embed empty text")
        if not texts:
            return []
        data = self._post("/embeddings", {"model": self.config.embed_model, "input": texts})
        rows = data.get("data", [])
        if len(rows) != len(texts):
            raise TransportError(f"/embeddings returned {len(rows)} rows for {len(texts)} inputs")
        out = []
        for row in rows:
            vec = np.asarray(row["embedding"], dtype=np.float64)
            if self._dimension is None:
                self._dimension = int(vec.shape[0])
            elif vec.shape[0] != self._dimension:
                raise ConfigError(
                    f"embedding dimension changed mid-session: {vec.shape[0]} != {self._dimension}"
                )
            norm = float(np.linalg.norm(vec))
            if norm == 0.0:
                raise TransportError("/embeddings returned a zero vector", retryable=False)
            out.append(vec / norm)
        return out

    def _chat(self, messages: list[dict[str, str]], temperature: float) -> str:
        data = self._post(
            "/chat/completions",
            {"model": self.config.model, "messages": messages, "temperature": temperature},
        )
        try:
            return data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"malformed chat completion response: {exc}", retryable=False) from exc

    def complete(self, request: LlmRequest) -> LlmResponse:
        prompt = render_prompt(request.task_kind, request.payload)
        messages = [
            {"role": "system", "content": _SYSTEM_MESSAGE},
            {"role": "user", "content": prompt},
        ]
        raw = self._chat(messages, request.temperature)
        try:
            result = validate_result(request.task_kind, extract_fenced_json(raw))
            return LlmResponse(request.task_kind, result, raw)
        except ProviderParseError:
            logger.info("parse failure on %s, attempting repair reprompt", request.task_kind)
        messages.append({"role": "assistant", "content": raw})
        messages.append({"role": "user", "content": _REPAIR_MESSAGE})
        raw = self._chat(messages, request.temperature)
        try:
            result = validate_result(request.task_kind, extract_fenced_json(raw))
            return LlmResponse(request.task_kind, result, raw)
        except ProviderParseError:
            return LlmResponse(request.task_kind, None, raw, parse_failed=True)

    def fingerprint(self) -> dict[str, Any]:
        return {
            "kind": "http",
            "endpoint": self.config.endpoint,
            "model": self.config.model,
            "embed_model": self.config.embed_model,
            "prompts_sha256": prompts_fingerprint(),
        }
