"""Sentence-boundary chunking with a character budget.

Chunks are disjoint substrings of the document; the gaps between them are
whitespace only, so reassembling chunks with the original inter-chunk
whitespace reproduces the document byte-for-byte.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import ConfigError, EmptyDocumentError
from .graph import Document, TextChunk, make_chunk_id

DEFAULT_TERMINATORS = frozenset({".", "!", "?"})

# Trailing-dot tokens that end an abbreviation, not a sentence.
DEFAULT_ABBREVIATIONS = frozenset(
    {
        "dr.", "mr.", "mrs.", "ms.", "prof.", "sr.", "jr.", "st.", "vs.",
        "etc.", "e.g.", "i.e.", "cf.", "al.", "fig.", "eq.", "no.", "vol.",
        "inc.", "ltd.", "co.", "corp.", "dept.", "approx.", "est.",
        "jan.", "feb.", "mar.", "apr.", "jun.", "jul.", "aug.", "sep.",
        "sept.", "oct.", "nov.", "dec.", "a.m.", "p.m.", "u.s.", "u.k.",
    }
)

_CLOSERS = "\"')]}”’"


@dataclass
class ChunkingConfig:
    """Budget and boundary rules for splitting a document."""

    max_chunk_chars: int = 1200
    min_chunk_chars: int = 0
    sentence_terminators: frozenset[str] = DEFAULT_TERMINATORS
    abbreviations: frozenset[str] = DEFAULT_ABBREVIATIONS

    def __post_init__(self):
        if self.max_chunk_chars < 1:
            raise ConfigError("max_chunk_chars must be >= 1")
        if not 0 <= self.min_chunk_chars <= self.max_chunk_chars:
            raise ConfigError("min_chunk_chars must satisfy 0 <= min <= max_chunk_chars")
        self.sentence_terminators = frozenset(self.sentence_terminators)
        self.abbreviations = frozenset(a.casefold() for a in self.abbreviations)


def load_abbreviations(path: str) -> frozenset[str]:
    """Read an abbreviation list, one token per line; '#' starts a comment."""
    out = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            token = line.split("#", 1)[0].strip()
            if token:
                out.add(token.casefold())
    return frozenset(out)


def _token_before(text: str, pos: int) -> str:
    """The word ending at (and including) the terminator at ``pos``."""
    start = pos
    while start > 0 and not text[start - 1].isspace():
        start -= 1
    return text[start : pos + 1]


def sentence_boundaries(text: str, cfg: ChunkingConfig | None = None) -> list[int]:
    """Offsets where a new sentence starts; strictly increasing, in (0, len).

    A boundary sits at the first non-whitespace character after a sentence
    terminator run (plus any closing quotes or brackets).  Terminators stay
    attached to the preceding sentence.  Abbreviations from the config list
    never split, and a terminator not followed by whitespace (decimals,
    mid-token dots) is not a boundary.
    """
    cfg = cfg or ChunkingConfig()
    terms = cfg.sentence_terminators
    boundaries: list[int] = []
    n = len(text)
    i = 0
    while i < n:
        ch = text[i]
        if ch not in terms:
            i += 1
            continue
        # abbreviation check applies to '.' terminators only
        if ch == "." and _token_before(text, i).casefold() in cfg.abbreviations:
            i += 1
            continue
        j = i
        while j + 1 < n and text[j + 1] in terms:
            j += 1
        while j + 1 < n and text[j + 1] in _CLOSERS:
            j += 1
        if j + 1 >= n:
            break  # document ends with this sentence
        if not text[j + 1].isspace():
            i = j + 1
            continue
        k = j + 1
        while k < n and text[k].isspace():
            k += 1
        if k < n:
            boundaries.append(k)
        i = k
    return boundaries


def _sentence_spans(text: str, cfg: ChunkingConfig) -> list[tuple[int, int]]:
    """Whitespace-trimmed (start, end) spans of each sentence."""
    cuts = [0] + sentence_boundaries(text, cfg) + [len(text)]
    spans = []
    for a, b in zip(cuts, cuts[1:]):
        start, end = a, b
        while start < end and text[start].isspace():
            start += 1
        while end > start and text[end - 1].isspace():
            end -= 1
        if start < end:
            spans.append((start, end))
    return spans


def doc_split(doc: Document, cfg: ChunkingConfig | None = None) -> list[TextChunk]:
    """Split a document into ordered chunks of whole sentences.

    Consecutive sentences are packed greedily while the chunk span stays
    within ``max_chunk_chars``; a single sentence over the budget is emitted
    whole as its own chunk.  A final chunk shorter than ``min_chunk_chars``
    is merged backwards when the merged span still fits the budget.
    """
    cfg = cfg or ChunkingConfig()
    if not doc.text.strip():
        raise EmptyDocumentError(f"document {doc.doc_id!r} is empty or whitespace-only")

    spans = _sentence_spans(doc.text, cfg)
    groups: list[tuple[int, int]] = []
    cur_start, cur_end = spans[0]
    for start, end in spans[1:]:
        if end - cur_start <= cfg.max_chunk_chars:
            cur_end = end
        else:
            groups.append((cur_start, cur_end))
            cur_start, cur_end = start, end
    groups.append((cur_start, cur_end))

    if (
        cfg.min_chunk_chars > 0
        and len(groups) >= 2
        and groups[-1][1] - groups[-1][0] < cfg.min_chunk_chars
        and groups[-1][1] - groups[-2][0] <= cfg.max_chunk_chars
    ):
        merged = (groups[-2][0], groups[-1][1])
        groups = groups[:-2] + [merged]

    return [
        TextChunk(
            chunk_id=make_chunk_id(doc.doc_id, idx),
            text=doc.text[start:end],
            doc_id=doc.doc_id,
            index=idx,
            start=start,
            end=end,
        )
        for idx, (start, end) in enumerate(groups)
    ]
