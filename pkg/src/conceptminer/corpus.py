"""Corpus ingestion, POS tagging, corpus statistics and significant phrase mining.

The input corpus is JSONL: one object per line with fields ``id``, ``title``,
``venue`` and ``year``. Titles are lowercased and tokenized on
non-alphanumeric characters, keeping intra-word hyphens ("multi-hop" stays one
token). Tagging uses a bundled closed-class lexicon plus suffix rules; unknown
words default to NOUN, which is the right call for academic titles.
"""

from __future__ import annotations

import json
import logging
import math
import re
from collections import Counter
from dataclasses import dataclass, field, replace
from importlib import resources

from .errors import CorpusError

log = logging.getLogger(__name__)

POS_TAGS = frozenset(
    {"NOUN", "VERB", "ADJ", "ADV", "PREP", "DET", "CONJ", "NUM", "OTHER"}
)

_TOKEN_RE = re.compile(r"[^\W_]+(?:-[^\W_]+)*", re.UNICODE)


@dataclass(frozen=True)
class Token:
    surface: str
    pos: str

    def __post_init__(self):
        if not self.surface:
            raise ValueError("empty token surface")
        if self.pos not in POS_TAGS:
            raise ValueError(f"unknown POS tag {self.pos!r}")


@dataclass(frozen=True)
class Document:
    """One title plus its metadata; the unit of ingestion."""

    id: str
    tokens: tuple[Token, ...]
    venue: str
    year: int
    time_slice: int = 0


@dataclass
class CorpusStats:
    doc_count: int
    token_df: dict[str, int]
    token_idf: dict[str, float]
    unigram_counts: Counter
    bigram_counts: Counter
    total_tokens: int


@dataclass
class SignificantPhraseSet:
    """Multi-word token sequences that pass the corpus-level significance test."""

    scores: dict[tuple[str, ...], float] = field(default_factory=dict)

    def __contains__(self, seq) -> bool:
        return tuple(seq) in self.scores

    def __len__(self) -> int:
        return len(self.scores)

    @property
    def phrases(self) -> set[tuple[str, ...]]:
        return set(self.scores)

    @property
    def max_length(self) -> int:
        return max((len(p) for p in self.scores), default=0)


# ---------------------------------------------------------------------------
# tokenization and tagging


def tokenize(title: str) -> list[str]:
    """Lowercase and split; punctuation dropped except intra-word hyphens."""
    return _TOKEN_RE.findall(title.lower())


def _load_lexicon() -> dict[str, str]:
    lex = {}
    path = resources.files("conceptminer") / "data" / "lexicon.tsv"
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        surface, tag = line.split("\t")
        lex[surface] = tag
    return lex


def _load_stopwords() -> frozenset[str]:
    path = resources.files("conceptminer") / "data" / "stopwords.txt"
    return frozenset(
        w.strip() for w in path.read_text(encoding="utf-8").splitlines() if w.strip()
    )


_LEXICON = _load_lexicon()
STOPWORDS = _load_stopwords()


def pos_tag(surfaces: list[str]) -> list[Token]:
    """Tag each token with the closed lexicon, then suffix rules, default NOUN."""
    if not surfaces:
        raise ValueError("pos_tag requires a non-empty token list")
    tagged = []
    for s in surfaces:
        tag = _LEXICON.get(s)
        if tag is None:
            if s.isdigit():
                tag = "NUM"
            elif len(s) > 4 and (s.endswith("ing") or s.endswith("ed")):
                tag = "VERB"
            elif len(s) > 3 and s.endswith("ly"):
                tag = "ADV"
            else:
                tag = "NOUN"
        tagged.append(Token(s, tag))
    return tagged


# ---------------------------------------------------------------------------
# ingestion


@dataclass(frozen=True)
class RecordError:
    line_no: int
    reason: str


def load_corpus(path, error_sink: list[RecordError] | None = None) -> list[Document]:
    """Read a JSONL corpus; malformed records are skipped and reported.

    Errors go to ``error_sink`` when given, and to the module logger either way.
    """
    docs: list[Document] = []
    seen_ids: set[str] = set()

    def report(line_no, reason):
        if error_sink is not None:
            error_sink.append(RecordError(line_no, reason))
        log.warning("corpus line %d skipped: %s", line_no, reason)

    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                report(line_no, f"bad JSON: {exc.msg}")
                continue
            if not isinstance(rec, dict):
                report(line_no, "record is not an object")
                continue
            missing = [k for k in ("id", "title", "venue", "year") if k not in rec]
            if missing:
                report(line_no, f"missing fields: {', '.join(missing)}")
                continue
            doc_id = str(rec["id"])
            if doc_id in seen_ids:
                report(line_no, f"duplicate id {doc_id!r}")
                continue
            try:
                year = int(rec["year"])
            except (TypeError, ValueError):
                report(line_no, f"year is not an integer: {rec['year']!r}")
                continue
            surfaces = tokenize(str(rec["title"]))
            if not surfaces:
                report(line_no, "empty title after tokenization")
                continue
            seen_ids.add(doc_id)
            docs.append(
                Document(
                    id=doc_id,
                    tokens=tuple(pos_tag(surfaces)),
                    venue=str(rec["venue"]),
                    year=year,
                )
            )
    return docs


def with_time_slice(doc: Document, time_slice: int) -> Document:
    return replace(doc, time_slice=time_slice)


# ---------------------------------------------------------------------------
# statistics


def compute_stats(docs: list[Document]) -> CorpusStats:
    if not docs:
        raise CorpusError("cannot compute statistics over an empty corpus")
    df: Counter = Counter()
    unigrams: Counter = Counter()
    bigrams: Counter = Counter()
    total = 0
    for doc in docs:
        surfaces = [t.surface for t in doc.tokens]
        df.update(set(surfaces))
        unigrams.update(surfaces)
        bigrams.update(zip(surfaces, surfaces[1:]))
        total += len(surfaces)
    n = len(docs)
    idf = {t: math.log(n / c) for t, c in df.items()}
    return CorpusStats(
        doc_count=n,
        token_df=dict(df),
        token_idf=idf,
        unigram_counts=unigrams,
        bigram_counts=bigrams,
        total_tokens=total,
    )


# ---------------------------------------------------------------------------
# significant phrase mining


def significance(c_uv: int, c_u: int, c_v: int, total: int) -> float:
    """z-score style cohesion of an adjacent unit pair against independence."""
    if c_uv <= 0:
        return float("-inf")
    mu0 = c_u * c_v / total
    return (c_uv - mu0) / math.sqrt(c_uv)


def mine_significant_phrases(
    docs: list[Document],
    stats: CorpusStats,
    min_support: int = 5,
    sig_threshold: float = 5.0,
) -> SignificantPhraseSet:
    """Agglomerative bottom-up merging of adjacent units across the corpus.

    Each round scores every adjacent unit pair with ``significance`` against
    current unit counts, merges all passing pairs (best score first, greedy and
    non-overlapping within a document) and repeats until no pair passes. The
    final set keeps merged sequences whose contiguous re-scan occurs in at
    least ``min_support`` documents.
    """
    units: list[list[tuple[str, ...]]] = [
        [(t.surface,) for t in doc.tokens] for doc in docs
    ]
    total = stats.total_tokens
    merge_scores: dict[tuple[str, ...], float] = {}

    while True:
        unit_counts: Counter = Counter()
        pair_counts: Counter = Counter()
        for seq in units:
            unit_counts.update(seq)
            pair_counts.update(zip(seq, seq[1:]))
        passing = {}
        for (u, v), c_uv in pair_counts.items():
            if c_uv < min_support:
                continue
            score = significance(c_uv, unit_counts[u], unit_counts[v], total)
            if score >= sig_threshold:
                passing[(u, v)] = score
        if not passing:
            break
        # Higher score merges first; lexicographic tiebreak keeps runs stable.
        rank = {
            pair: i
            for i, (pair, _) in enumerate(
                sorted(passing.items(), key=lambda kv: (-kv[1], kv[0]))
            )
        }
        for di, seq in enumerate(units):
            candidates = [
                (rank[(seq[i], seq[i + 1])], i)
                for i in range(len(seq) - 1)
                if (seq[i], seq[i + 1]) in rank
            ]
            if not candidates:
                continue
            taken: set[int] = set()
            merge_at: set[int] = set()
            for _, i in sorted(candidates):
                if i in taken or i + 1 in taken:
                    continue
                merge_at.add(i)
                taken.update((i, i + 1))
            merged: list[tuple[str, ...]] = []
            i = 0
            while i < len(seq):
                if i in merge_at:
                    merged.append(seq[i] + seq[i + 1])
                    i += 2
                else:
                    merged.append(seq[i])
                    i += 1
            units[di] = merged
        for (u, v), score in passing.items():
            merge_scores[u + v] = score

    result = {}
    for phrase, score in merge_scores.items():
        if _contiguous_doc_frequency(docs, phrase) >= min_support:
            result[phrase] = score
    return SignificantPhraseSet(scores=result)


def _contiguous_doc_frequency(docs: list[Document], phrase: tuple[str, ...]) -> int:
    k = len(phrase)
    count = 0
    for doc in docs:
        surfaces = [t.surface for t in doc.tokens]
        for i in range(len(surfaces) - k + 1):
            if tuple(surfaces[i : i + k]) == phrase:
                count += 1
                break
    return count


def find_contained_phrases(
    surfaces: list[str], sig: SignificantPhraseSet
) -> set[tuple[str, ...]]:
    """All significant phrases occurring contiguously within a token span."""
    found = set()
    n = len(surfaces)
    for length in range(2, min(sig.max_length, n) + 1):
        for i in range(n - length + 1):
            cand = tuple(surfaces[i : i + length])
            if cand in sig:
                found.add(cand)
    return found
