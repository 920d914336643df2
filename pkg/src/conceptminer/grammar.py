"""Grammar definition, validation and the plain-text grammar file format.

File format, one declaration per line::

    # comment
    Phrase -> Mod Concept        # production; first rule's head is the start
    Word -> <any>                # wildcard terminal matches any single token
    adapt Concept a=0.5 b=0.5    # mark a nonterminal as adapted
    prior * 0.01                 # Dirichlet weight for every rule
    prior Words 0.5              # or per-nonterminal

Symbols that ever appear as a rule head are nonterminals; everything else is
a terminal.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources

from .errors import GrammarError

WILDCARD = "<any>"

DEFAULT_RULE_ALPHA = 0.01
DEFAULT_PYP_A = 0.5  # scale
DEFAULT_PYP_B = 0.5  # discount


@dataclass(frozen=True)
class Rule:
    head: str
    rhs: tuple[str, ...]
    alpha: float = DEFAULT_RULE_ALPHA


@dataclass(frozen=True)
class AdaptorParams:
    a: float = DEFAULT_PYP_A
    b: float = DEFAULT_PYP_B

    def __post_init__(self):
        if not 0.0 <= self.b < 1.0:
            raise GrammarError(f"discount b must lie in [0, 1), got {self.b}")
        if self.a <= -self.b:
            raise GrammarError(f"scale a must exceed -b, got a={self.a} b={self.b}")


@dataclass
class Grammar:
    rules: list[Rule]
    start: str
    adaptors: dict[str, AdaptorParams] = field(default_factory=dict)

    def __post_init__(self):
        self.nonterminals = {r.head for r in self.rules}
        self.rules_by_head: dict[str, list[int]] = {}
        for i, r in enumerate(self.rules):
            self.rules_by_head.setdefault(r.head, []).append(i)
        self.validate()

    @property
    def terminals(self) -> set[str]:
        out = set()
        for r in self.rules:
            for s in r.rhs:
                if s not in self.nonterminals and s != WILDCARD:
                    out.add(s)
        return out

    @property
    def has_wildcard(self) -> bool:
        return any(WILDCARD in r.rhs for r in self.rules)

    def validate(self) -> None:
        if not self.rules:
            raise GrammarError("grammar has no rules")
        if self.start not in self.nonterminals:
            raise GrammarError(f"start symbol {self.start!r} has no rules")
        for r in self.rules:
            if not r.rhs:
                raise GrammarError(f"empty right-hand side for {r.head}")
            if r.alpha <= 0:
                raise GrammarError(f"rule prior must be positive for {r.head}")
        for c in self.adaptors:
            if c not in self.nonterminals:
                raise GrammarError(f"adapted symbol {c!r} has no rules")
        # reachable nonterminals must be expandable
        reach = {self.start}
        frontier = [self.start]
        while frontier:
            nt = frontier.pop()
            for ri in self.rules_by_head.get(nt, []):
                for s in self.rules[ri].rhs:
                    if s in self.nonterminals and s not in reach:
                        reach.add(s)
                        frontier.append(s)
        # no adaptor may derive itself
        derives: dict[str, set[str]] = {nt: set() for nt in self.nonterminals}
        for r in self.rules:
            derives[r.head].update(s for s in r.rhs if s in self.nonterminals)
        for c in self.adaptors:
            seen: set[str] = set()
            stack = list(derives[c])
            while stack:
                nt = stack.pop()
                if nt == c:
                    raise GrammarError(f"adaptor {c!r} derives itself")
                if nt in seen:
                    continue
                seen.add(nt)
                stack.extend(derives[nt])
        # unary chains must be acyclic for exact chart parsing
        unary: dict[str, set[str]] = {nt: set() for nt in self.nonterminals}
        for r in self.rules:
            if len(r.rhs) == 1 and r.rhs[0] in self.nonterminals:
                unary[r.head].add(r.rhs[0])
        self.unary_order = _topo_order(unary)

    def rule_ids(self, head: str) -> list[int]:
        return self.rules_by_head.get(head, [])


def _topo_order(edges: dict[str, set[str]]) -> list[str]:
    """Topological order where dependencies (children) come first."""
    order: list[str] = []
    state: dict[str, int] = {}

    def visit(node: str):
        mark = state.get(node, 0)
        if mark == 1:
            raise GrammarError("grammar contains a unary rule cycle")
        if mark == 2:
            return
        state[node] = 1
        for child in edges.get(node, ()):
            visit(child)
        state[node] = 2
        order.append(node)

    for node in edges:
        visit(node)
    return order


def parse_grammar(text: str) -> Grammar:
    raw_rules: list[tuple[str, tuple[str, ...]]] = []
    adaptors: dict[str, AdaptorParams] = {}
    priors: dict[str, float] = {}
    star_prior: float | None = None

    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] == "adapt":
            if len(parts) != 4:
                raise GrammarError(f"line {line_no}: malformed adapt declaration")
            params = {}
            for kv in parts[2:]:
                if "=" not in kv:
                    raise GrammarError(f"line {line_no}: expected a=... b=...")
                k, v = kv.split("=", 1)
                try:
                    params[k] = float(v)
                except ValueError:
                    raise GrammarError(f"line {line_no}: bad number {v!r}") from None
            if set(params) != {"a", "b"}:
                raise GrammarError(f"line {line_no}: adapt needs both a= and b=")
            adaptors[parts[1]] = AdaptorParams(a=params["a"], b=params["b"])
        elif parts[0] == "prior":
            if len(parts) != 3:
                raise GrammarError(f"line {line_no}: malformed prior declaration")
            try:
                value = float(parts[2])
            except ValueError:
                raise GrammarError(f"line {line_no}: bad number {parts[2]!r}") from None
            if parts[1] == "*":
                star_prior = value
            else:
                priors[parts[1]] = value
        elif "->" in parts:
            sep = parts.index("->")
            if sep != 1 or sep == len(parts) - 1:
                raise GrammarError(f"line {line_no}: malformed production")
            raw_rules.append((parts[0], tuple(parts[2:])))
        else:
            raise GrammarError(f"line {line_no}: unrecognized declaration {line!r}")

    if not raw_rules:
        raise GrammarError("grammar file defines no productions")
    rules = []
    for head, rhs in raw_rules:
        alpha = priors.get(head, star_prior if star_prior is not None else DEFAULT_RULE_ALPHA)
        rules.append(Rule(head, rhs, alpha))
    return Grammar(rules=rules, start=raw_rules[0][0], adaptors=adaptors)


def load_grammar(path) -> Grammar:
    with open(path, encoding="utf-8") as fh:
        return parse_grammar(fh.read())


def grammar_to_text(grammar: Grammar) -> str:
    lines = [f"{r.head} -> {' '.join(r.rhs)}" for r in grammar.rules]
    for c, p in grammar.adaptors.items():
        lines.append(f"adapt {c} a={p.a} b={p.b}")
    for r in grammar.rules:
        lines.append(f"prior {r.head} {r.alpha}")
    # collapse duplicate per-head prior lines, keep declaration order
    seen = set()
    out = []
    for line in lines:
        if line.startswith("prior"):
            key = " ".join(line.split()[:2])
            if key in seen:
                continue
            seen.add(key)
        out.append(line)
    return "\n".join(out) + "\n"


def default_grammar(variant: str = "adaptor") -> Grammar:
    """Bundled concept/modifier grammar; ``adaptor`` adapts Concept only,
    ``adaptor_mod`` adapts Concept and Mod."""
    key = variant.strip().lower().replace(":", "_")
    names = {"adaptor": "adaptor.grammar", "adaptor_mod": "adaptor_mod.grammar"}
    if key not in names:
        raise GrammarError(f"unknown grammar variant {variant!r}")
    path = resources.files("conceptminer") / "data" / "grammars" / names[key]
    return parse_grammar(path.read_text(encoding="utf-8"))
