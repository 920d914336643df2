"""Relation phrase detection and PMI-based title segmentation.

A title is split into phrases at relation phrases (connective word sequences
like "by applying" or "for") detected with POS tag patterns. A detected
relation phrase only splits the title when the words flanking it do not cohere
(low PMI); cohesive units like "precision and recall" stay intact.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .corpus import STOPWORDS, CorpusStats, Document, SignificantPhraseSet, find_contained_phrases
from .errors import MissingStatsError

# Sentinel for pairs that never co-occur; stands in for -inf in comparisons.
PMI_FLOOR = -1.0e30

# Tag sequences that qualify as relation phrases, tried longest first at each
# position, never at the title start.
DEFAULT_PATTERNS: tuple[tuple[str, ...], ...] = (
    ("PREP", "VERB"),
    ("VERB", "PREP"),
    ("PREP", "DET"),
    ("PREP",),
    ("VERB",),
    ("CONJ",),
)

MAX_RELATION_PHRASE_LEN = 4

DEFAULT_IDF_THRESHOLD = 0.2


@dataclass(frozen=True)
class RelationPhrase:
    tokens: tuple[str, ...]
    span: tuple[int, int]

    def __str__(self) -> str:
        return " ".join(self.tokens)


@dataclass
class Phrase:
    """A contiguous title chunk between splitting relation phrases."""

    doc_id: str
    span: tuple[int, int]
    tokens: tuple[str, ...]
    p_w: tuple[str, ...]
    p_sp: frozenset[tuple[str, ...]]
    p_l: RelationPhrase | None
    p_r: RelationPhrase | None
    venue: str
    year: int
    time_slice: int = 0
    aspect: int | None = None
    domain: int | None = None

    @property
    def phrase_id(self) -> str:
        return f"{self.doc_id}:{self.span[0]}-{self.span[1]}"


def detect_relation_phrases(
    doc: Document, patterns: tuple[tuple[str, ...], ...] = DEFAULT_PATTERNS
) -> list[RelationPhrase]:
    """Maximal non-overlapping pattern matches, left to right, longest first."""
    for p in patterns:
        if not 1 <= len(p) <= MAX_RELATION_PHRASE_LEN:
            raise ValueError(f"pattern length out of range: {p}")
    ordered = sorted(patterns, key=len, reverse=True)
    tags = [t.pos for t in doc.tokens]
    out: list[RelationPhrase] = []
    i = 1  # patterns never match at the title start
    n = len(tags)
    while i < n:
        matched = None
        for pat in ordered:
            j = i + len(pat)
            if j <= n and tuple(tags[i:j]) == pat:
                matched = (i, j)
                break
        if matched:
            s, e = matched
            out.append(
                RelationPhrase(tuple(t.surface for t in doc.tokens[s:e]), (s, e))
            )
            i = e
        else:
            i += 1
    return out


def pmi(x: str, y: str, stats: CorpusStats) -> float:
    """ln( c(x,y) * T / (c(x) * c(y)) ) over adjacent bigram counts."""
    c_x = stats.unigram_counts.get(x, 0)
    c_y = stats.unigram_counts.get(y, 0)
    if c_x == 0 or c_y == 0:
        raise MissingStatsError(f"no corpus statistics for {x!r} / {y!r}")
    c_xy = stats.bigram_counts.get((x, y), 0)
    if c_xy == 0:
        return PMI_FLOOR
    return math.log(c_xy * stats.total_tokens / (c_x * c_y))


def segment_title(
    doc: Document,
    rps: list[RelationPhrase],
    stats: CorpusStats,
    sig: SignificantPhraseSet | None = None,
    pmi_threshold: float = 2.0,
    idf_threshold: float = DEFAULT_IDF_THRESHOLD,
) -> list[Phrase]:
    """Split the title at relation phrases whose flanking words do not cohere.

    A relation phrase splits when the PMI between the token immediately before
    and the token immediately after it is below ``pmi_threshold``, or when a
    flank is missing (title boundary). Chunks between splits become phrases;
    a title with no splits yields a single phrase with no relation phrases.
    """
    surfaces = [t.surface for t in doc.tokens]
    n = len(surfaces)
    splitting: list[RelationPhrase] = []
    for rp in rps:
        s, e = rp.span
        if s == 0 or e >= n:
            splitting.append(rp)
            continue
        score = pmi(surfaces[s - 1], surfaces[e], stats)
        if score < pmi_threshold:
            splitting.append(rp)

    left_at: dict[int, RelationPhrase] = {rp.span[1]: rp for rp in splitting}
    right_at: dict[int, RelationPhrase] = {rp.span[0]: rp for rp in splitting}

    bounds = [0]
    for rp in splitting:
        bounds.extend(rp.span)
    bounds.append(n)

    phrases = []
    for s, e in zip(bounds[::2], bounds[1::2]):
        if e <= s:
            continue
        chunk = surfaces[s:e]
        phrases.append(
            Phrase(
                doc_id=doc.id,
                span=(s, e),
                tokens=tuple(chunk),
                p_w=_content_tokens(chunk, stats, idf_threshold),
                p_sp=frozenset(find_contained_phrases(chunk, sig)) if sig else frozenset(),
                p_l=left_at.get(s),
                p_r=right_at.get(e),
                venue=doc.venue,
                year=doc.year,
                time_slice=doc.time_slice,
            )
        )
    return phrases


def _content_tokens(
    surfaces: list[str], stats: CorpusStats, idf_threshold: float
) -> tuple[str, ...]:
    kept = []
    for s in surfaces:
        if s in STOPWORDS:
            continue
        if stats.token_idf.get(s, math.inf) < idf_threshold:
            continue
        kept.append(s)
    return tuple(kept)


def segment_corpus(
    docs: list[Document],
    stats: CorpusStats,
    sig: SignificantPhraseSet | None = None,
    pmi_threshold: float = 2.0,
    idf_threshold: float = DEFAULT_IDF_THRESHOLD,
    patterns: tuple[tuple[str, ...], ...] = DEFAULT_PATTERNS,
) -> list[Phrase]:
    out: list[Phrase] = []
    for doc in docs:
        rps = detect_relation_phrases(doc, patterns)
        out.extend(
            segment_title(doc, rps, stats, sig, pmi_threshold, idf_threshold)
        )
    return out
