"""Pre-entity construction and entity disambiguation.

Per-chunk NER produces provisional "pre-entities"; a vector similarity
pre-filter proposes candidate duplicate pairs, an LLM judge confirms them,
and confirmed pairs are merged by transitive closure (union-find).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConfigError, MissingEmbeddingError, ProviderParseError
from .graph import Entity, TextChunk, make_entity_id, normalize_name
from .providers import ner_request, same_judge_request

logger = logging.getLogger(__name__)


@dataclass(eq=False)
class PreEntity:
    """Entity candidate emitted by NER for one chunk, before disambiguation."""

    name: str
    entity_type: str
    description: str
    source_chunk: str
    chunk_ids: frozenset[str] = field(default_factory=frozenset)
    embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        self.chunk_ids = frozenset(self.chunk_ids) or frozenset({self.source_chunk})
        if self.source_chunk not in self.chunk_ids:
            raise ConfigError("source_chunk must be one of chunk_ids")

    def embedding_text(self) -> str:
        return f"{self.name} ({self.entity_type})" if self.entity_type else self.name


@dataclass
class DisambiguationConfig:
    """Vector pre-filter threshold and judge toggle for duplicate merging."""

    sim_threshold: float = 0.85
    judge_enabled: bool = True

    def __post_init__(self):
        if not 0.0 < self.sim_threshold <= 1.0:
            raise ConfigError("sim_threshold must be in (0, 1]")


def ner_chunk(chunk: TextChunk, provider) -> list[PreEntity]:
    """Extract pre-entities from one chunk via the provider.

    Duplicate names (same normalized name and type) within the chunk
    collapse to the first occurrence.  Raises ProviderParseError when the
    model reply stayed unparseable after the provider's repair attempt.
    """
    response = provider.complete(ner_request(chunk))
    if response.parse_failed or response.result is None:
        raise ProviderParseError(
            f"NER output unparseable for chunk {chunk.chunk_id!r}", raw_text=response.raw_text
        )
    out: list[PreEntity] = []
    seen: set[tuple[str, str]] = set()
    for entry in response.result["entities"]:
        key = (normalize_name(entry["name"]), normalize_name(entry["type"]))
        if key in seen:
            continue
        seen.add(key)
        out.append(
            PreEntity(
                name=entry["name"],
                entity_type=entry["type"],
                description=entry["description"],
                source_chunk=chunk.chunk_id,
            )
        )
    return out


def collect_pre_entities(
    chunks: list[TextChunk],
    provider,
    on_skip: Optional[Callable[[TextChunk, Exception], None]] = None,
) -> list[PreEntity]:
    """Run NER over every chunk and attach embeddings to the union.

    Chunks whose NER output cannot be parsed are skipped (reported through
    ``on_skip``) and the pipeline continues.
    """
    pre: list[PreEntity] = []
    for chunk in chunks:
        try:
            pre.extend(ner_chunk(chunk, provider))
        except ProviderParseError as exc:
            logger.warning("skipping chunk %s: %s", chunk.chunk_id, exc)
            if on_skip is not None:
                on_skip(chunk, exc)
    if pre:
        vectors = provider.embed([p.embedding_text() for p in pre])
        for p, v in zip(pre, vectors):
            p.embedding = v
    return pre


def vect_judge(a: PreEntity, b: PreEntity, cfg: DisambiguationConfig) -> bool:
    """Vector pre-filter: cosine of the two embeddings against the threshold."""
    if a.embedding is None or b.embedding is None:
        raise MissingEmbeddingError("vect_judge called before embeddings were attached")
    return float(a.embedding @ b.embedding) >= cfg.sim_threshold


def same_judge(
    a: PreEntity,
    b: PreEntity,
    provider,
    on_failure: Optional[Callable[[PreEntity, PreEntity, Exception], None]] = None,
) -> bool:
    """LLM confirmation that two candidates denote the same entity.

    A parse failure is conservative: the pair is reported as not-same so
    that nothing merges on garbage output.
    """
    response = provider.complete(same_judge_request(a, b))
    if response.parse_failed or response.result is None:
        exc = ProviderParseError("same_judge output unparseable", raw_text=response.raw_text)
        logger.warning("same_judge failed for (%s, %s); not merging", a.name, b.name)
        if on_failure is not None:
            on_failure(a, b, exc)
        return False
    return response.result["same"]


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, x: int) -> int:
        while self.parent[x] != x:
            self.parent[x] = self.parent[self.parent[x]]
            x = self.parent[x]
        return x

    def union(self, x: int, y: int) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            self.parent[max(rx, ry)] = min(rx, ry)


def _canonical_member(members: list[PreEntity]) -> PreEntity:
    # longest description wins; ties go to the lexicographically smallest name
    return min(members, key=lambda p: (-len(p.description), p.name))


def disambiguate(
    pre: list[PreEntity],
    cfg: DisambiguationConfig,
    provider,
    on_judge_failure: Optional[Callable[[PreEntity, PreEntity, Exception], None]] = None,
) -> list[Entity]:
    """Merge duplicate pre-entities into a partition of entities.

    Candidate pairs pass the vector filter; confirmed pairs (judge, or the
    filter alone when the judge is disabled) are merged transitively.
    Provenance chunk ids of merged members are unioned.
    """
    for p in pre:
        if p.embedding is None:
            raise MissingEmbeddingError("disambiguate called before embeddings were attached")

    uf = _UnionFind(len(pre))
    for i in range(len(pre)):
        for j in range(i + 1, len(pre)):
            if not vect_judge(pre[i], pre[j], cfg):
                continue
            if cfg.judge_enabled:
                confirmed = same_judge(pre[i], pre[j], provider, on_failure=on_judge_failure)
            else:
                confirmed = True
            if confirmed:
                uf.union(i, j)

    clusters: dict[int, list[int]] = {}
    for i in range(len(pre)):
        clusters.setdefault(uf.find(i), []).append(i)

    entities: list[Entity] = []
    used_ids: set[str] = set()
    for root in sorted(clusters):
        members = [pre[i] for i in clusters[root]]
        canon = _canonical_member(members)
        chunk_ids = frozenset().union(*(m.chunk_ids for m in members))
        salt = 0
        entity_id = make_entity_id(canon.name, canon.entity_type)
        while entity_id in used_ids:
            salt += 1
            entity_id = make_entity_id(canon.name, canon.entity_type, salt)
        used_ids.add(entity_id)
        entities.append(
            Entity(
                entity_id=entity_id,
                name=canon.name,
                entity_type=canon.entity_type,
                description=canon.description,
                chunk_ids=chunk_ids,
                embedding=canon.embedding,
            )
        )
    return entities
