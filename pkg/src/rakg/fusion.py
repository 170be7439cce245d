"""Fusing a newly built graph into an initial graph.

Entity merging first (vector filter + judge confirmation, initial-graph
identities win), then relationship integration: all triples from both
graphs are remapped through the merge and deduplicated.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional

from .extraction import DisambiguationConfig
from .graph import Entity, KnowledgeGraph, Tail, Triple, dedupe_triples, make_entity_id
from .providers import same_judge_request
from .errors import ProviderParseError

logger = logging.getLogger(__name__)


def ensure_entity_embeddings(graph: KnowledgeGraph, provider) -> None:
    """Attach embeddings (of "name (type)") to entities that lack one."""
    missing = [e for e in graph.entities.values() if e.embedding is None]
    if not missing:
        return
    vectors = provider.embed([e.embedding_text() for e in missing])
    for entity, vector in zip(missing, vectors):
        entity.embedding = vector


def _confirm_same(a: Entity, b: Entity, provider, on_judge_failure) -> bool:
    response = provider.complete(same_judge_request(a, b))
    if response.parse_failed or response.result is None:
        exc = ProviderParseError("same_judge output unparseable", raw_text=response.raw_text)
        logger.warning("fusion judge failed for (%s, %s); not merging", a.name, b.name)
        if on_judge_failure is not None:
            on_judge_failure(a, b, exc)
        return False  # fail closed: an unmerged duplicate is recoverable
    return response.result["same"]


def merge_graphs(
    new_kg: KnowledgeGraph,
    kg_prime: KnowledgeGraph,
    cfg: DisambiguationConfig,
    provider,
    on_judge_failure: Optional[Callable[[Entity, Entity, Exception], None]] = None,
) -> KnowledgeGraph:
    """Merge ``new_kg`` into ``kg_prime``; initial-graph entity ids win.

    Cross-graph pairs passing the vector filter and the judge are unified;
    chunk provenance is unioned; every triple from both inputs survives
    modulo the id remapping and deduplication.
    """
    if not kg_prime.entities and not kg_prime.triples:
        merged = new_kg.copy()
        merged.meta = {**kg_prime.meta, **new_kg.meta}
        return dedupe_triples(merged)

    ensure_entity_embeddings(new_kg, provider)
    ensure_entity_embeddings(kg_prime, provider)

    prime_entities = list(kg_prime.entities.values())
    new_entities = list(new_kg.entities.values())

    # map each new entity to the prime entity it merges into (if any):
    # highest cosine wins, ties broken by prime entity id
    merge_into: dict[str, str] = {}
    for ne in new_entities:
        best: Optional[tuple[float, str]] = None
        for pe in prime_entities:
            score = float(ne.embedding @ pe.embedding)
            if score < cfg.sim_threshold:
                continue
            if cfg.judge_enabled and not _confirm_same(ne, pe, provider, on_judge_failure):
                continue
            if best is None or score > best[0] or (score == best[0] and pe.entity_id < best[1]):
                best = (score, pe.entity_id)
        if best is not None:
            merge_into[ne.entity_id] = best[1]

    out = KnowledgeGraph(meta={**new_kg.meta, **kg_prime.meta})
    id_map: dict[str, str] = {}

    for pe in prime_entities:
        extra_chunks: frozenset[str] = frozenset()
        for ne in new_entities:
            if merge_into.get(ne.entity_id) == pe.entity_id:
                extra_chunks |= ne.chunk_ids
        out.add_entity(
            Entity(
                entity_id=pe.entity_id,
                name=pe.name,
                entity_type=pe.entity_type,
                description=pe.description,
                chunk_ids=pe.chunk_ids | extra_chunks,
                embedding=pe.embedding,
            )
        )
        id_map[pe.entity_id] = pe.entity_id

    for ne in new_entities:
        if ne.entity_id in merge_into:
            id_map[ne.entity_id] = merge_into[ne.entity_id]
            continue
        assigned = ne.entity_id
        salt = 0
        while out.has_entity(assigned):
            salt += 1
            assigned = make_entity_id(ne.name, ne.entity_type, salt)
        id_map[ne.entity_id] = assigned
        out.add_entity(
            Entity(
                entity_id=assigned,
                name=ne.name,
                entity_type=ne.entity_type,
                description=ne.description,
                chunk_ids=ne.chunk_ids,
                embedding=ne.embedding,
            )
        )

    for source in (kg_prime, new_kg):
        for t in source.triples:
            tail = Tail.entity(id_map[t.tail.value]) if t.tail.is_entity else t.tail
            out.add_triple(
                Triple(
                    head=id_map[t.head],
                    relation=t.relation,
                    tail=tail,
                    provenance=t.provenance,
                    judge_verdict=t.judge_verdict,
                )
            )

    result = dedupe_triples(out)
    result.validate()
    return result
