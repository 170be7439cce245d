"""Core graph data model: chunks, entities, triples, and knowledge graphs.

Every other module consumes these types.  Graphs are treated as immutable
once a pipeline stage has produced them; builder methods (``add_entity``,
``add_triple``) are meant for single-threaded construction.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from .errors import (
    EntityNotFoundError,
    GraphParseError,
    InvariantViolation,
)

EMBEDDING_NORM_TOL = 1e-6


def normalize_name(text: str) -> str:
    """Casefold and collapse internal whitespace; the key for name matching."""
    return " ".join(text.split()).casefold()


def make_entity_id(name: str, entity_type: str, salt: int = 0) -> str:
    """Deterministic entity id from the normalized (name, type) pair.

    ``salt`` disambiguates the rare case of distinct entities that share a
    normalized name and type within one graph.
    """
    base = f"{normalize_name(name)}|{normalize_name(entity_type)}"
    if salt:
        base += f"|{salt}"
    return "e" + hashlib.sha256(base.encode("utf-8")).hexdigest()[:12]


def _check_unit_norm(vector: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(vector, dtype=np.float64)
    if arr.ndim != 1:
        raise InvariantViolation(f"{what}: embedding must be a 1-d vector")
    norm = float(np.linalg.norm(arr))
    if not math.isclose(norm, 1.0, abs_tol=EMBEDDING_NORM_TOL):
        raise InvariantViolation(f"{what}: embedding norm {norm} is not 1 ± {EMBEDDING_NORM_TOL}")
    return arr


@dataclass(frozen=True)
class Document:
    """A raw input document."""

    doc_id: str
    text: str


@dataclass(frozen=True)
class TextChunk:
    """A sentence-boundary-aligned segment of a document.

    ``start``/``end`` are character offsets into the source document; the
    text between consecutive chunks is whitespace only.
    """

    chunk_id: str
    text: str
    doc_id: str
    index: int
    start: int = 0
    end: int = 0

    def __post_init__(self):
        if not self.text.strip():
            raise InvariantViolation(f"chunk {self.chunk_id!r}: text is empty after trimming")


def make_chunk_id(doc_id: str, index: int) -> str:
    """Stable chunk id, a deterministic function of (doc_id, index)."""
    return f"{doc_id}:c{index:04d}"


@dataclass(frozen=True)
class Tail:
    """Tagged tail of a triple: an entity reference or a literal value."""

    kind: str  # "entity" | "literal"
    value: str

    def __post_init__(self):
        if self.kind not in ("entity", "literal"):
            raise InvariantViolation(f"tail kind must be 'entity' or 'literal', got {self.kind!r}")

    @classmethod
    def entity(cls, entity_id: str) -> Tail:
        return cls("entity", entity_id)

    @classmethod
    def literal(cls, value: str) -> Tail:
        return cls("literal", value)

    @property
    def is_entity(self) -> bool:
        return self.kind == "entity"


@dataclass(frozen=True)
class JudgeVerdict:
    """Outcome of judging a triple: pass/fail plus a score in [0, 1]."""

    passed: bool
    score: float

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvariantViolation(f"judge score {self.score} outside [0, 1]")


@dataclass(frozen=True)
class Triple:
    """Directed (head, relation, tail) edge with provenance."""

    head: str
    relation: str
    tail: Tail
    provenance: frozenset[str] = field(default_factory=frozenset)
    judge_verdict: Optional[JudgeVerdict] = None

    def __post_init__(self):
        if not self.relation:
            raise InvariantViolation("triple relation is empty")
        object.__setattr__(self, "provenance", frozenset(self.provenance))

    def key(self) -> tuple[str, str, str, str]:
        """Identity of the edge, ignoring provenance and verdict."""
        return (self.head, self.relation, self.tail.kind, self.tail.value)


@dataclass(eq=False)
class Entity:
    """A named node with type, description, provenance, and optional embedding."""

    entity_id: str
    name: str
    entity_type: str = ""
    description: str = ""
    chunk_ids: frozenset[str] = field(default_factory=frozenset)
    embedding: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.name:
            raise InvariantViolation("entity name is empty")
        self.chunk_ids = frozenset(self.chunk_ids)
        if self.embedding is not None:
            self.embedding = _check_unit_norm(self.embedding, f"entity {self.entity_id!r}")

    @property
    def normalized_name(self) -> str:
        return normalize_name(self.name)

    def embedding_text(self) -> str:
        """The string whose vector represents this entity: name plus type."""
        return f"{self.name} ({self.entity_type})" if self.entity_type else self.name


class KnowledgeGraph:
    """Entity set plus an ordered triple list, with free-form meta.

    Triples may transiently duplicate while a graph is being assembled;
    ``validate`` enforces the full invariant set and ``dedupe_triples``
    restores it after merges.
    """

    def __init__(self, meta: Optional[dict[str, Any]] = None):
        self.entities: dict[str, Entity] = {}
        self.triples: list[Triple] = []
        self.meta: dict[str, Any] = dict(meta or {})

    def __len__(self) -> int:
        return len(self.entities)

    def add_entity(self, entity: Entity) -> Entity:
        if entity.entity_id in self.entities:
            raise InvariantViolation(f"duplicate entity_id {entity.entity_id!r}")
        self.entities[entity.entity_id] = entity
        return entity

    def add_triple(self, triple: Triple) -> Triple:
        if triple.head not in self.entities:
            raise EntityNotFoundError(f"triple head {triple.head!r} not in graph")
        if triple.tail.is_entity and triple.tail.value not in self.entities:
            raise EntityNotFoundError(f"triple tail {triple.tail.value!r} not in graph")
        self.triples.append(triple)
        return triple

    def has_entity(self, entity_id: str) -> bool:
        return entity_id in self.entities

    def entity(self, entity_id: str) -> Entity:
        try:
            return self.entities[entity_id]
        except KeyError:
            raise EntityNotFoundError(f"unknown entity_id {entity_id!r}") from None

    def find_by_name(self, name: str) -> list[Entity]:
        """Entities whose normalized name equals the normalized query."""
        wanted = normalize_name(name)
        return [e for e in self.entities.values() if e.normalized_name == wanted]

    def rel(self, entity_id: str) -> list[Triple]:
        """Outgoing relation network of an entity, in insertion order."""
        if entity_id not in self.entities:
            raise EntityNotFoundError(f"unknown entity_id {entity_id!r}")
        return [t for t in self.triples if t.head == entity_id]

    def copy(self) -> KnowledgeGraph:
        g = KnowledgeGraph(meta=dict(self.meta))
        g.entities = dict(self.entities)
        g.triples = list(self.triples)
        return g

    def validate(self) -> None:
        """Raise InvariantViolation unless every graph invariant holds."""
        seen: set[tuple[str, str, str, str]] = set()
        for i, t in enumerate(self.triples):
            if t.head not in self.entities:
                raise InvariantViolation(f"triples[{i}]: head {t.head!r} missing from entities")
            if t.tail.is_entity and t.tail.value not in self.entities:
                raise InvariantViolation(f"triples[{i}]: tail {t.tail.value!r} missing from entities")
            k = t.key()
            if k in seen:
                raise InvariantViolation(f"triples[{i}]: duplicate triple {k}")
            seen.add(k)

    def structurally_equal(self, other: KnowledgeGraph) -> bool:
        """Order-insensitive equality on the canonical representation."""
        return to_record(self) == to_record(other)


def rel(graph: KnowledgeGraph, entity_id: str) -> list[Triple]:
    """Outgoing relation network of ``entity_id`` in ``graph``."""
    return graph.rel(entity_id)


def dedupe_triples(graph: KnowledgeGraph) -> KnowledgeGraph:
    """Collapse duplicate (head, relation, tail) triples, unioning provenance.

    First-seen order is preserved; the first non-null judge verdict wins.
    Idempotent.
    """
    out = KnowledgeGraph(meta=dict(graph.meta))
    out.entities = dict(graph.entities)
    merged: dict[tuple[str, str, str, str], Triple] = {}
    order: list[tuple[str, str, str, str]] = []
    for t in graph.triples:
        k = t.key()
        if k not in merged:
            merged[k] = t
            order.append(k)
        else:
            prev = merged[k]
            merged[k] = Triple(
                head=prev.head,
                relation=prev.relation,
                tail=prev.tail,
                provenance=prev.provenance | t.provenance,
                judge_verdict=prev.judge_verdict if prev.judge_verdict is not None else t.judge_verdict,
            )
    out.triples = [merged[k] for k in order]
    return out


# --- canonical serialization -------------------------------------------------
#
# One graph per file.  Top-level sections: "entities", "triples", and "meta".
# Sorted keys and sorted record order make equal graphs byte-identical.


def _entity_record(e: Entity, include_embedding: bool = True) -> dict[str, Any]:
    rec: dict[str, Any] = {
        "entity_id": e.entity_id,
        "name": e.name,
        "entity_type": e.entity_type,
        "description": e.description,
        "chunk_ids": sorted(e.chunk_ids),
    }
    if include_embedding and e.embedding is not None:
        rec["embedding"] = [float(x) for x in e.embedding]
    return rec


def _triple_record(t: Triple) -> dict[str, Any]:
    rec: dict[str, Any] = {
        "head": t.head,
        "relation": t.relation,
        "tail": {"kind": t.tail.kind, "value": t.tail.value},
        "provenance": sorted(t.provenance),
    }
    if t.judge_verdict is not None:
        rec["judge_verdict"] = {
            "passed": t.judge_verdict.passed,
            "score": float(t.judge_verdict.score),
        }
    return rec


def to_record(graph: KnowledgeGraph, include_embeddings: bool = True) -> dict[str, Any]:
    """Canonical dict form: entities sorted by id, triples by edge key."""
    entities = [
        _entity_record(graph.entities[eid], include_embeddings)
        for eid in sorted(graph.entities)
    ]
    triples = [_triple_record(t) for t in sorted(graph.triples, key=lambda t: t.key())]
    return {"entities": entities, "triples": triples, "meta": graph.meta}


def serialize(graph: KnowledgeGraph, include_embeddings: bool = True) -> bytes:
    """Canonical bytes for a valid graph; equal graphs serialize identically."""
    graph.validate()
    text = json.dumps(
        to_record(graph, include_embeddings),
        sort_keys=True,
        indent=2,
        ensure_ascii=False,
    )
    return (text + "\n").encode("utf-8")


def _expect(value: Any, types: tuple[type, ...], path: str, what: str) -> Any:
    if not isinstance(value, types):
        raise GraphParseError(path, f"expected {what}, got {type(value).__name__}")
    return value


def _parse_entity(rec: Any, path: str) -> Entity:
    _expect(rec, (dict,), path, "object")
    for key in ("entity_id", "name", "entity_type", "description", "chunk_ids"):
        if key not in rec:
            raise GraphParseError(f"{path}.{key}", "missing required field")
    name = _expect(rec["name"], (str,), f"{path}.name", "string")
    if not name:
        raise GraphParseError(f"{path}.name", "must be non-empty")
    chunk_ids = _expect(rec["chunk_ids"], (list,), f"{path}.chunk_ids", "list")
    for j, c in enumerate(chunk_ids):
        _expect(c, (str,), f"{path}.chunk_ids[{j}]", "string")
    embedding = None
    if "embedding" in rec and rec["embedding"] is not None:
        values = _expect(rec["embedding"], (list,), f"{path}.embedding", "list of numbers")
        for j, v in enumerate(values):
            _expect(v, (int, float), f"{path}.embedding[{j}]", "number")
        embedding = np.asarray(values, dtype=np.float64)
    try:
        return Entity(
            entity_id=_expect(rec["entity_id"], (str,), f"{path}.entity_id", "string"),
            name=name,
            entity_type=_expect(rec["entity_type"], (str,), f"{path}.entity_type", "string"),
            description=_expect(rec["description"], (str,), f"{path}.description", "string"),
            chunk_ids=frozenset(chunk_ids),
            embedding=embedding,
        )
    except InvariantViolation as exc:
        raise GraphParseError(path, str(exc)) from exc


def _parse_triple(rec: Any, path: str) -> Triple:
    _expect(rec, (dict,), path, "object")
    for key in ("head", "relation", "tail", "provenance"):
        if key not in rec:
            raise GraphParseError(f"{path}.{key}", "missing required field")
    tail = _expect(rec["tail"], (dict,), f"{path}.tail", "object")
    kind = tail.get("kind")
    if kind not in ("entity", "literal"):
        raise GraphParseError(f"{path}.tail.kind", "expected 'entity' or 'literal'")
    value = _expect(tail.get("value"), (str,), f"{path}.tail.value", "string")
    relation = _expect(rec["relation"], (str,), f"{path}.relation", "string")
    if not relation:
        raise GraphParseError(f"{path}.relation", "must be non-empty")
    provenance = _expect(rec["provenance"], (list,), f"{path}.provenance", "list")
    for j, c in enumerate(provenance):
        _expect(c, (str,), f"{path}.provenance[{j}]", "string")
    verdict = None
    if "judge_verdict" in rec and rec["judge_verdict"] is not None:
        v = _expect(rec["judge_verdict"], (dict,), f"{path}.judge_verdict", "object")
        passed = _expect(v.get("passed"), (bool,), f"{path}.judge_verdict.passed", "boolean")
        score = v.get("score")
        if not isinstance(score, (int, float)) or isinstance(score, bool):
            raise GraphParseError(f"{path}.judge_verdict.score", "expected number")
        try:
            verdict = JudgeVerdict(passed=passed, score=float(score))
        except InvariantViolation as exc:
            raise GraphParseError(f"{path}.judge_verdict.score", str(exc)) from exc
    return Triple(
        head=_expect(rec["head"], (str,), f"{path}.head", "string"),
        relation=relation,
        tail=Tail(kind, value),
        provenance=frozenset(provenance),
        judge_verdict=verdict,
    )


def from_record(data: Any) -> KnowledgeGraph:
    """Build and validate a graph from its canonical dict form."""
    _expect(data, (dict,), "$", "object")
    for key in ("entities", "triples"):
        if key not in data:
            raise GraphParseError(f"$.{key}", "missing required section")
    meta = data.get("meta", {})
    _expect(meta, (dict,), "$.meta", "object")
    graph = KnowledgeGraph(meta=meta)
    entities = _expect(data["entities"], (list,), "$.entities", "list")
    for i, rec in enumerate(entities):
        entity = _parse_entity(rec, f"$.entities[{i}]")
        if graph.has_entity(entity.entity_id):
            raise GraphParseError(f"$.entities[{i}].entity_id", f"duplicate id {entity.entity_id!r}")
        graph.add_entity(entity)
    triples = _expect(data["triples"], (list,), "$.triples", "list")
    for i, rec in enumerate(triples):
        triple = _parse_triple(rec, f"$.triples[{i}]")
        try:
            graph.add_triple(triple)
        except EntityNotFoundError as exc:
            raise GraphParseError(f"$.triples[{i}]", str(exc)) from exc
    try:
        graph.validate()
    except InvariantViolation as exc:
        raise GraphParseError("$", str(exc)) from exc
    return graph


def deserialize(data: bytes) -> KnowledgeGraph:
    """Parse canonical graph bytes; round-trips ``serialize`` exactly."""
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise GraphParseError("$", f"invalid utf-8: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GraphParseError(f"$ (line {exc.lineno}, col {exc.colno})", exc.msg) from exc
    return from_record(payload)


def graph_from_parts(
    entities: Iterable[Entity],
    triples: Sequence[Triple] = (),
    meta: Optional[dict[str, Any]] = None,
) -> KnowledgeGraph:
    """Convenience constructor used heavily by tests and fusion."""
    g = KnowledgeGraph(meta=meta)
    for e in entities:
        g.add_entity(e)
    for t in triples:
        g.add_triple(t)
    return g
