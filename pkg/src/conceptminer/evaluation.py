"""Gold-standard loading and the two metric suites.

Concept quality scores exact token-sequence matches within a document,
ignoring aspects; typed quality additionally requires the aspect to match and
is reported overall and per aspect. Duplicate mentions match one-to-one.
"""

from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass

from .errors import GoldError

log = logging.getLogger(__name__)

ASPECT_LABELS = ("Technique", "Application")

_LABEL_ALIASES = {
    "technique": "Technique",
    "tech": "Technique",
    "t": "Technique",
    "method": "Technique",
    "application": "Application",
    "app": "Application",
    "a": "Application",
    "problem": "Application",
}


@dataclass(frozen=True)
class GoldAnnotation:
    doc_id: str
    tokens: tuple[str, ...]
    aspect: str

    def __post_init__(self):
        if self.aspect not in ASPECT_LABELS:
            raise GoldError(f"aspect must be one of {ASPECT_LABELS}, got {self.aspect!r}")
        if not self.tokens:
            raise GoldError("gold mention has no tokens")


@dataclass(frozen=True)
class PRF:
    precision: float
    recall: float
    f1: float

    @classmethod
    def from_counts(cls, correct: int, predicted: int, gold: int) -> "PRF":
        p = correct / predicted if predicted else 0.0
        r = correct / gold if gold else 0.0
        f1 = 2 * p * r / (p + r) if p + r > 0 else 0.0
        return cls(p, r, f1)


@dataclass(frozen=True)
class AspectRow:
    aspect: str
    prf: PRF
    gold_count: int
    predicted_count: int
    defined: bool


@dataclass(frozen=True)
class TypedQuality:
    overall: PRF
    per_aspect: dict[str, AspectRow]


def load_gold_tsv(path) -> list[GoldAnnotation]:
    """TSV with columns doc_id, mention (space-joined tokens), aspect."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GoldError(f"{path}: line {line_no}: expected 3 tab-separated columns")
            doc_id, mention, aspect = parts
            label = _LABEL_ALIASES.get(aspect.strip().lower())
            if label is None:
                raise GoldError(f"{path}: line {line_no}: unknown aspect {aspect!r}")
            tokens = tuple(mention.lower().split())
            out.append(GoldAnnotation(doc_id.strip(), tokens, label))
    return out


def convert_external_gold(src, dst, delimiter: str | None = None) -> int:
    """Convert a delimited annotation file into the native gold TSV.

    Accepts files with a header naming a document id column (``doc_id``,
    ``id`` or ``title_id``), a mention column (``mention``, ``concept`` or
    ``phrase``) and an aspect column (``aspect``, ``type`` or ``label``);
    aspect values are normalized case-insensitively (``T``/``technique``,
    ``A``/``application``, ...). Returns the number of converted rows.
    """
    id_cols = ("doc_id", "id", "title_id")
    mention_cols = ("mention", "concept", "phrase")
    aspect_cols = ("aspect", "type", "label")
    with open(src, encoding="utf-8", newline="") as fh:
        sample = fh.read(4096)
        fh.seek(0)
        if delimiter is None:
            delimiter = "\t" if "\t" in sample.splitlines()[0] else ","
        reader = csv.DictReader(fh, delimiter=delimiter)
        if reader.fieldnames is None:
            raise GoldError(f"{src}: no header row")
        fields = {f.strip().lower(): f for f in reader.fieldnames}

        def pick(options):
            for o in options:
                if o in fields:
                    return fields[o]
            raise GoldError(
                f"{src}: no column among {options}; found {sorted(fields)}"
            )

        id_col, mention_col, aspect_col = (
            pick(id_cols),
            pick(mention_cols),
            pick(aspect_cols),
        )
        rows = []
        for rec in reader:
            label = _LABEL_ALIASES.get(str(rec[aspect_col]).strip().lower())
            if label is None:
                raise GoldError(f"{src}: unknown aspect {rec[aspect_col]!r}")
            mention = " ".join(str(rec[mention_col]).lower().split())
            rows.append((str(rec[id_col]).strip(), mention, label))
    with open(dst, "w", encoding="utf-8") as fh:
        for doc_id, mention, label in rows:
            fh.write(f"{doc_id}\t{mention}\t{label}\n")
    return len(rows)


def _check_docs(gold: list[GoldAnnotation], known_doc_ids) -> None:
    if known_doc_ids is None:
        return
    known = set(known_doc_ids)
    unknown = sorted({g.doc_id for g in gold} - known)
    if unknown:
        raise GoldError(f"gold references unknown documents: {unknown[:5]}")


def _matched(pred_keys: Counter, gold_keys: Counter) -> int:
    return sum(min(n, gold_keys[k]) for k, n in pred_keys.items())


def concept_quality(predicted, gold: list[GoldAnnotation], known_doc_ids=None) -> PRF:
    """Span-only mention matching; aspects ignored.

    ``predicted`` is any iterable of objects with ``doc_id`` and ``concept``
    (or ``tokens``) attributes, or (doc_id, tokens) pairs.
    """
    _check_docs(gold, known_doc_ids)
    pred_keys = Counter(_pred_key(p)[:2] for p in predicted)
    gold_keys = Counter((g.doc_id, g.tokens) for g in gold)
    correct = _matched(pred_keys, gold_keys)
    return PRF.from_counts(correct, sum(pred_keys.values()), sum(gold_keys.values()))


def _pred_key(p) -> tuple[str, tuple[str, ...], str | None]:
    if isinstance(p, tuple):
        doc_id, tokens = p[0], tuple(p[1])
        aspect = p[2] if len(p) > 2 else None
        return doc_id, tokens, aspect
    tokens = getattr(p, "concept", None)
    if tokens is None:
        tokens = p.tokens
    return p.doc_id, tuple(tokens), getattr(p, "aspect", None)


def typed_quality(predicted, gold: list[GoldAnnotation], known_doc_ids=None) -> TypedQuality:
    """Mention matching requiring both span and aspect to agree."""
    _check_docs(gold, known_doc_ids)
    preds = [_pred_key(p) for p in predicted]
    pred_keys = Counter((d, t, a) for d, t, a in preds)
    gold_keys = Counter((g.doc_id, g.tokens, g.aspect) for g in gold)
    correct = _matched(pred_keys, gold_keys)
    overall = PRF.from_counts(correct, len(preds), sum(gold_keys.values()))

    per_aspect: dict[str, AspectRow] = {}
    for aspect in ASPECT_LABELS:
        p_sub = Counter(k for k in pred_keys.elements() if k[2] == aspect)
        g_sub = Counter(k for k in gold_keys.elements() if k[2] == aspect)
        n_pred, n_gold = sum(p_sub.values()), sum(g_sub.values())
        row = AspectRow(
            aspect=aspect,
            prf=PRF.from_counts(_matched(p_sub, g_sub), n_pred, n_gold),
            gold_count=n_gold,
            predicted_count=n_pred,
            defined=n_gold > 0,
        )
        if not row.defined:
            log.warning("no gold mentions for aspect %s; row reported as zero", aspect)
        per_aspect[aspect] = row
    return TypedQuality(overall=overall, per_aspect=per_aspect)
