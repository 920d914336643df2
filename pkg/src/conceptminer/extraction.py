"""Phase-2 orchestration: grammar inference per partition and report building.

Typed phrases are partitioned by aspect (and domain when available), each
partition gets its own grammar sampler, and every parseable phrase yields one
typed concept mention whose concept and modifiers tile the phrase exactly.
"""

from __future__ import annotations

import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field

from .adaptor import AdaptedGrammarState, run_sampler, tree_yield
from .errors import PipelineError
from .grammar import Grammar, default_grammar
from .segmentation import Phrase

log = logging.getLogger(__name__)

SPARSE_PARTITION_SIZE = 50

CONCEPT_SYMBOL = "Concept"
MODIFIER_SYMBOL = "Mod"


@dataclass(frozen=True)
class TypedConceptMention:
    doc_id: str
    span: tuple[int, int]
    concept: tuple[str, ...]
    modifiers: tuple[tuple[tuple[str, ...], str], ...]  # (tokens, "pre" | "post")
    aspect: str
    domain: int | None
    time_slice: int

    def tiles_phrase(self, tokens: tuple[str, ...]) -> bool:
        pre = [m for m, pos in self.modifiers if pos == "pre"]
        post = [m for m, pos in self.modifiers if pos == "post"]
        rebuilt: tuple[str, ...] = ()
        for m in pre:
            rebuilt += m
        rebuilt += self.concept
        for m in post:
            rebuilt += m
        return rebuilt == tokens


@dataclass
class PartitionResult:
    key: tuple
    mentions: list[TypedConceptMention]
    total: int
    unparseable: list[str]
    state: AdaptedGrammarState | None = None


def _mention_pieces(state: AdaptedGrammarState, tree) -> list[tuple[str, tuple[str, ...]]]:
    """Left-to-right (symbol, yield) for each Concept/Mod subtree root."""
    heads = state.compiled.head_of
    pieces: list[tuple[str, tuple[str, ...]]] = []

    def walk(node) -> None:
        head = heads[node[0]]
        if head in (CONCEPT_SYMBOL, MODIFIER_SYMBOL):
            pieces.append((head, tree_yield(node)))
            return
        for child in node[1]:
            if not isinstance(child, str):
                walk(child)

    walk(tree)
    return pieces


def extract_partition(
    phrases: list[Phrase],
    grammar: Grammar | str = "adaptor",
    iterations: int = 1000,
    seed: int = 1,
    keep_state: bool = False,
    aspect_names: dict[int, str] | None = None,
) -> PartitionResult:
    """Run the grammar sampler on one partition and read off the mentions."""
    if not phrases:
        raise PipelineError("cannot extract from an empty partition")
    if isinstance(grammar, str):
        grammar = default_grammar(grammar)
    if len(phrases) < SPARSE_PARTITION_SIZE:
        log.warning(
            "partition of %d phrases is sparse; concept statistics may be weak",
            len(phrases),
        )
    items = [(p.phrase_id, p.tokens) for p in phrases]
    state = run_sampler(items, grammar, iterations, seed)

    mentions: list[TypedConceptMention] = []
    key = (phrases[0].aspect, phrases[0].domain)
    for p in phrases:
        record = state.parses.get(p.phrase_id)
        if record is None:
            continue
        pieces = _mention_pieces(state, record.tree)
        concepts = [y for s, y in pieces if s == CONCEPT_SYMBOL]
        if len(concepts) != 1:
            raise PipelineError(
                f"parse of {p.phrase_id} has {len(concepts)} concepts; "
                "extraction expects grammars with exactly one Concept per phrase"
            )
        concept = concepts[0]
        seen_concept = False
        modifiers = []
        for sym, y in pieces:
            if sym == CONCEPT_SYMBOL:
                seen_concept = True
                continue
            modifiers.append((y, "post" if seen_concept else "pre"))
        aspect_name = (
            aspect_names.get(p.aspect, f"aspect-{p.aspect}")
            if aspect_names is not None
            else f"aspect-{p.aspect}"
        )
        mentions.append(
            TypedConceptMention(
                doc_id=p.doc_id,
                span=p.span,
                concept=concept,
                modifiers=tuple(modifiers),
                aspect=aspect_name,
                domain=p.domain,
                time_slice=p.time_slice,
            )
        )
    return PartitionResult(
        key=key,
        mentions=mentions,
        total=len(phrases),
        unparseable=sorted(state.skipped),
        state=state if keep_state else None,
    )


@dataclass
class ConceptReport:
    concept: tuple[str, ...]
    mentions: int
    modifiers: list[tuple[str, int]]  # joined modifier -> count, ranked
    aspects: dict[str, int] = field(default_factory=dict)
    domains: dict[int, int] = field(default_factory=dict)


def build_reports(
    mentions: list[TypedConceptMention],
    domain_model=None,
    top_k: int = 10,
) -> tuple[list[ConceptReport], list[dict]]:
    """Aggregate mentions into per-concept modifier rankings and domain rows.

    Modifier ranks break ties lexicographically. Domain rows carry the most
    probable venues from the trained model's venue distributions when a
    domain model is supplied.
    """
    if not mentions:
        raise PipelineError("cannot build reports from an empty mention set")
    per_concept: dict[tuple[str, ...], list[TypedConceptMention]] = defaultdict(list)
    for m in mentions:
        per_concept[m.concept].append(m)

    reports = []
    for concept in sorted(per_concept):
        group = per_concept[concept]
        mod_counts = Counter(
            " ".join(tokens) for m in group for tokens, _ in m.modifiers
        )
        ranked = sorted(mod_counts.items(), key=lambda kv: (-kv[1], kv[0]))
        aspects = Counter(m.aspect for m in group)
        domains = Counter(m.domain for m in group if m.domain is not None)
        reports.append(
            ConceptReport(
                concept=concept,
                mentions=len(group),
                modifiers=ranked,
                aspects=dict(aspects),
                domains=dict(domains),
            )
        )
    reports.sort(key=lambda r: (-r.mentions, r.concept))

    domain_rows: list[dict] = []
    by_domain: dict[int, Counter] = defaultdict(Counter)
    for m in mentions:
        if m.domain is not None:
            by_domain[m.domain][" ".join(m.concept)] += 1
    if domain_model is not None:
        phi_v = domain_model.phi_v()
        venues = domain_model.fs.v.items
        for d in range(domain_model.hyper.n_domains):
            order = sorted(
                range(len(venues)), key=lambda v: (-phi_v[d, v], venues[v])
            )
            top_venues = [venues[v] for v in order[: min(3, len(venues))]]
            top_concepts = [
                c
                for c, _ in sorted(
                    by_domain.get(d, Counter()).items(),
                    key=lambda kv: (-kv[1], kv[0]),
                )[:top_k]
            ]
            domain_rows.append(
                {"domain": d, "top_venues": top_venues, "top_concepts": top_concepts}
            )
    elif by_domain:
        for d in sorted(by_domain):
            top_concepts = [
                c
                for c, _ in sorted(
                    by_domain[d].items(), key=lambda kv: (-kv[1], kv[0])
                )[:top_k]
            ]
            domain_rows.append(
                {"domain": d, "top_venues": [], "top_concepts": top_concepts}
            )
    return reports, domain_rows


def concepts_tsv(reports: list[ConceptReport], top_k: int = 10) -> str:
    lines = ["concept\tmentions\taspects\ttop_modifiers"]
    for r in reports:
        aspects = ",".join(f"{a}:{n}" for a, n in sorted(r.aspects.items()))
        mods = ", ".join(f"{m} ({n})" for m, n in r.modifiers[:top_k])
        lines.append(f"{' '.join(r.concept)}\t{r.mentions}\t{aspects}\t{mods}")
    return "\n".join(lines) + "\n"


def domains_tsv(domain_rows: list[dict]) -> str:
    lines = ["domain\ttop_venues\ttop_concepts"]
    for row in domain_rows:
        lines.append(
            f"{row['domain']}\t{', '.join(row['top_venues'])}\t"
            f"{', '.join(row['top_concepts'])}"
        )
    return "\n".join(lines) + "\n"
