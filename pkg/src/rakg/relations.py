"""Relation network construction: retrieval, generation, and judging.

For each disambiguated entity we gather its provenance chunks plus
similarity-retrieved chunks (corpus retrospective retrieval) and the
neighborhoods of similar nodes in the initial graph (graph structure
retrieval), feed the bundle to the model, then filter the generated
triples through a judge.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional

from .errors import ConfigError, ProviderParseError
from .graph import (
    Entity,
    JudgeVerdict,
    KnowledgeGraph,
    Tail,
    TextChunk,
    Triple,
    make_entity_id,
    normalize_name,
)
from .index import VectorIndex
from .providers import relation_gen_request, relation_judge_request

logger = logging.getLogger(__name__)

JUDGE_PASS_SCORE = 0.5


@dataclass
class RelationGenConfig:
    """Retrieval thresholds and judge toggle for relation generation."""

    text_threshold: float = 0.75
    kg_threshold: float = 0.80
    judge_enabled: bool = True

    def __post_init__(self):
        for name, value in (("text_threshold", self.text_threshold), ("kg_threshold", self.kg_threshold)):
            if not 0.0 < value <= 1.0:
                raise ConfigError(f"{name} must be in (0, 1]")


@dataclass
class Subgraph:
    """Nodes retrieved from the initial graph plus their outgoing triples."""

    nodes: list[Entity] = field(default_factory=list)
    triples: list[Triple] = field(default_factory=list)

    def view(self) -> dict[str, Any]:
        """Name-level rendering used in prompts and fixture payloads."""
        by_id = {e.entity_id: e for e in self.nodes}

        def tail_name(t: Triple) -> str:
            if t.tail.is_entity:
                node = by_id.get(t.tail.value)
                return node.name if node is not None else t.tail.value
            return t.tail.value

        return {
            "nodes": [{"name": e.name, "type": e.entity_type} for e in self.nodes],
            "triples": [
                {
                    "head": by_id[t.head].name if t.head in by_id else t.head,
                    "relation": t.relation,
                    "tail": tail_name(t),
                    "tail_kind": t.tail.kind,
                }
                for t in self.triples
            ],
        }


@dataclass
class RetrievalBundle:
    """Everything the generator sees for one central entity."""

    entity: Entity
    texts: list[TextChunk]
    subgraph: Subgraph


def corpus_retrieve(
    entity: Entity,
    chunks: Mapping[str, TextChunk],
    chunk_index: VectorIndex,
    cfg: RelationGenConfig,
) -> list[TextChunk]:
    """Provenance chunks plus threshold-similar chunks, in document order.

    Entities without provenance or embedding (e.g. loaded from an initial
    graph) may legitimately retrieve nothing.
    """
    wanted: set[str] = {cid for cid in entity.chunk_ids if cid in chunks}
    if entity.embedding is not None and len(chunk_index):
        for item_id, _score in chunk_index.query_threshold(entity.embedding, cfg.text_threshold):
            if item_id in chunks:
                wanted.add(item_id)
    found = [chunks[cid] for cid in wanted]
    found.sort(key=lambda c: (c.doc_id, c.index))
    return found


def graph_retrieve(
    entity: Entity,
    kg_index: VectorIndex,
    kg_prime: Optional[KnowledgeGraph],
    cfg: RelationGenConfig,
) -> Subgraph:
    """Similar nodes of the initial graph and their relation networks."""
    sub = Subgraph()
    if kg_prime is None or not len(kg_index) or entity.embedding is None:
        return sub
    seen_triples: set[tuple[str, str, str, str]] = set()
    node_ids: set[str] = set()
    for item_id, _score in kg_index.query_threshold(entity.embedding, cfg.kg_threshold):
        if not kg_prime.has_entity(item_id) or item_id in node_ids:
            continue
        node_ids.add(item_id)
        sub.nodes.append(kg_prime.entity(item_id))
        for t in kg_prime.rel(item_id):
            if t.key() not in seen_triples:
                seen_triples.add(t.key())
                sub.triples.append(t)
    # tails referenced by the triples ride along so the view can name them
    for t in sub.triples:
        if t.tail.is_entity and t.tail.value not in node_ids and kg_prime.has_entity(t.tail.value):
            node_ids.add(t.tail.value)
            sub.nodes.append(kg_prime.entity(t.tail.value))
    return sub


def build_bundle(
    entity: Entity,
    chunks: Mapping[str, TextChunk],
    chunk_index: VectorIndex,
    kg_index: VectorIndex,
    kg_prime: Optional[KnowledgeGraph],
    cfg: RelationGenConfig,
) -> RetrievalBundle:
    return RetrievalBundle(
        entity=entity,
        texts=corpus_retrieve(entity, chunks, chunk_index, cfg),
        subgraph=graph_retrieve(entity, kg_index, kg_prime, cfg),
    )


def triple_view(triple: Triple, owner: KnowledgeGraph) -> dict[str, Any]:
    """Name-level rendering of a triple for judge payloads."""
    head = owner.entity(triple.head).name
    if triple.tail.is_entity:
        tail = owner.entity(triple.tail.value).name
    else:
        tail = triple.tail.value
    return {"head": head, "relation": triple.relation, "tail": tail, "tail_kind": triple.tail.kind}


def generate_relations(
    bundle: RetrievalBundle,
    provider,
    entity_lookup: dict[str, Entity],
    on_skip: Optional[Callable[[Entity, Exception], None]] = None,
) -> tuple[list[Triple], list[Entity]]:
    """Generate the relation network of the bundle's entity.

    Entity tails resolve against ``entity_lookup`` (normalized name ->
    Entity); unseen tail names become new provisional entities, which are
    returned alongside the triples and added to the lookup so later bundles
    reuse them.  A parse failure leaves the entity with an empty network.
    """
    response = provider.complete(
        relation_gen_request(bundle.entity, bundle.texts, bundle.subgraph.view())
    )
    if response.parse_failed or response.result is None:
        exc = ProviderParseError(
            f"relation generation unparseable for entity {bundle.entity.name!r}",
            raw_text=response.raw_text,
        )
        logger.warning("%s", exc)
        if on_skip is not None:
            on_skip(bundle.entity, exc)
        return [], []

    provenance = frozenset(c.chunk_id for c in bundle.texts)
    triples: list[Triple] = []
    new_entities: list[Entity] = []
    seen: set[tuple[str, str, str, str]] = set()
    for entry in response.result["triples"]:
        if entry["tail_kind"] == "literal":
            tail = Tail.literal(entry["tail_value"])
        else:
            key = normalize_name(entry["tail_value"])
            target = entity_lookup.get(key)
            if target is None:
                target = _provisional_entity(entry["tail_value"], provenance, entity_lookup)
                entity_lookup[key] = target
                new_entities.append(target)
            tail = Tail.entity(target.entity_id)
        triple = Triple(
            head=bundle.entity.entity_id,
            relation=entry["relation"],
            tail=tail,
            provenance=provenance,
        )
        if triple.key() in seen:
            continue
        seen.add(triple.key())
        triples.append(triple)
    return triples, new_entities


def _provisional_entity(
    name: str, provenance: frozenset[str], entity_lookup: dict[str, Entity]
) -> Entity:
    taken = {e.entity_id for e in entity_lookup.values()}
    salt = 0
    entity_id = make_entity_id(name, "unknown")
    while entity_id in taken:
        salt += 1
        entity_id = make_entity_id(name, "unknown", salt)
    return Entity(
        entity_id=entity_id,
        name=name,
        entity_type="unknown",
        description="",
        chunk_ids=provenance,
    )


def judge_triples(
    triples: list[Triple],
    bundle: RetrievalBundle,
    provider,
    on_judge_failure: Optional[Callable[[Triple, Exception], None]] = None,
    name_of: Optional[Callable[[str], str]] = None,
) -> tuple[list[Triple], list[Triple]]:
    """Attach judge verdicts and split triples into (kept, rejected).

    The judge only filters and annotates; triple content is never altered.
    A judge parse failure keeps the triple without a verdict (removal is
    the lossy action, so judging fails open).
    """
    resolve = name_of or (lambda entity_id: entity_id)
    kept: list[Triple] = []
    rejected: list[Triple] = []
    sub_view = bundle.subgraph.view()
    for t in triples:
        view = {
            "head": resolve(t.head),
            "relation": t.relation,
            "tail": resolve(t.tail.value) if t.tail.is_entity else t.tail.value,
            "tail_kind": t.tail.kind,
        }
        response = provider.complete(relation_judge_request(view, bundle.texts, sub_view))
        if response.parse_failed or response.result is None:
            exc = ProviderParseError("relation_judge output unparseable", raw_text=response.raw_text)
            logger.warning("judge failed on %s; keeping triple", t.key())
            if on_judge_failure is not None:
                on_judge_failure(t, exc)
            kept.append(t)
            continue
        score = response.result["score"]
        verdict = JudgeVerdict(passed=score >= JUDGE_PASS_SCORE, score=score)
        judged = Triple(
            head=t.head,
            relation=t.relation,
            tail=t.tail,
            provenance=t.provenance,
            judge_verdict=verdict,
        )
        (kept if verdict.passed else rejected).append(judged)
    return kept, rejected
