"""Exact in-memory cosine-similarity index over unit vectors.

A plain linear scan: corpus sizes here never justify approximate search,
and exactness keeps the retrieval stages trivially testable against a
brute-force oracle.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .errors import DimensionMismatchError, InvariantViolation
from .graph import _check_unit_norm

PAYLOAD_KINDS = ("chunk", "kg_node", "pre_entity")


class VectorIndex:
    """Immutable-after-build index of (item_id, unit vector, payload kind)."""

    def __init__(self, dimension: int):
        if dimension < 1:
            raise InvariantViolation("index dimension must be >= 1")
        self.dimension = dimension
        self._ids: list[str] = []
        self._id_set: set[str] = set()
        self._kinds: list[str] = []
        self._vectors: list[np.ndarray] = []
        self._matrix: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self._ids)

    def add(self, item_id: str, vector: np.ndarray, payload_kind: str) -> None:
        if payload_kind not in PAYLOAD_KINDS:
            raise InvariantViolation(f"unknown payload_kind {payload_kind!r}")
        if item_id in self._id_set:
            raise InvariantViolation(f"duplicate item_id {item_id!r}")
        arr = _check_unit_norm(np.asarray(vector, dtype=np.float64), f"index item {item_id!r}")
        if arr.shape[0] != self.dimension:
            raise DimensionMismatchError(
                f"vector for {item_id!r} has dimension {arr.shape[0]}, index expects {self.dimension}"
            )
        self._id_set.add(item_id)
        self._ids.append(item_id)
        self._kinds.append(payload_kind)
        self._vectors.append(arr)
        self._matrix = None

    def kind_of(self, item_id: str) -> str:
        return self._kinds[self._ids.index(item_id)]

    def _scores(self, query: np.ndarray) -> np.ndarray:
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (self.dimension,):
            raise DimensionMismatchError(
                f"query has shape {q.shape}, index expects ({self.dimension},)"
            )
        if not self._vectors:
            return np.zeros(0, dtype=np.float64)
        if self._matrix is None:
            self._matrix = np.vstack(self._vectors)
        return self._matrix @ q

    def query_threshold(self, query: np.ndarray, threshold: float) -> list[tuple[str, float]]:
        """All items with cosine >= threshold, best first, ids break ties."""
        scores = self._scores(query)
        hits = [
            (self._ids[i], float(s)) for i, s in enumerate(scores) if float(s) >= threshold
        ]
        hits.sort(key=lambda pair: (-pair[1], pair[0]))
        return hits

    def query_topk(self, query: np.ndarray, k: int) -> list[tuple[str, float]]:
        """The k highest-cosine items (fewer if the index is smaller)."""
        if k < 1:
            raise InvariantViolation("k must be >= 1")
        scores = self._scores(query)
        ranked = [(self._ids[i], float(s)) for i, s in enumerate(scores)]
        ranked.sort(key=lambda pair: (-pair[1], pair[0]))
        return ranked[:k]
