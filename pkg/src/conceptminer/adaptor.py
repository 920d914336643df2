"""Pitman-Yor adaptor grammar engine.

A PCFG whose designated nonterminals cache whole derivation subtrees under a
Pitman-Yor process. State is the set of currently stored parses: PCFG rule
usage counts plus, per adaptor, a Chinese-restaurant arrangement of tables
each serving one cached subtree. Inference is Metropolis-Hastings: proposals
come from an inside chart over a static PCFG approximation of the current
state (smoothed rule counts plus one pseudo-rule per cached table), and the
acceptance ratio compares exact joint probabilities.

Trees are plain tuples ``(rule_id, children)`` with token strings at the
leaves so they hash and compare structurally.
"""

from __future__ import annotations

import json
import logging
import math
import random
from dataclasses import dataclass, field

from .errors import GrammarError, UnparseableYieldError
from .grammar import WILDCARD, AdaptorParams, Grammar

log = logging.getLogger(__name__)

NEW_TABLE = "new"

CHECKPOINT_FORMAT = "conceptminer-grammar-state"
CHECKPOINT_VERSION = 1


# ---------------------------------------------------------------------------
# probability primitives


def _check_pyp_params(a: float, b: float) -> None:
    if not 0.0 <= b < 1.0:
        raise ValueError(f"discount b must lie in [0, 1), got {b}")
    if a <= -b:
        raise ValueError(f"scale a must exceed -b, got a={a} b={b}")


def log_p_pyp(occupancy, a: float, b: float) -> float:
    """Log probability of a table occupancy vector under the Pitman-Yor CRP.

    The first-table factor and the first denominator term are the same value
    and are cancelled analytically, which keeps the computation valid for
    negative scale parameters.
    """
    _check_pyp_params(a, b)
    occ = list(occupancy)
    if any(m < 1 for m in occ):
        raise ValueError("occupancy entries must be >= 1")
    if not occ:
        return 0.0
    n = sum(occ)
    total = 0.0
    for k in range(1, len(occ)):
        total += math.log(b * k + a)
    for m in occ:
        for j in range(1, m):
            total += math.log(j - b)
    for i in range(1, n):
        total -= math.log(i + a)
    return total


def p_pyp(occupancy, a: float, b: float) -> float:
    return math.exp(log_p_pyp(occupancy, a, b))


def log_p_dir(f, alpha) -> float:
    """Log Dirichlet-multinomial mass of count vector ``f`` under prior ``alpha``."""
    f = list(f)
    alpha = list(alpha)
    if len(f) != len(alpha):
        raise ValueError("count and prior vectors must have equal length")
    if any(x < 0 for x in f):
        raise ValueError("counts must be nonnegative")
    if any(x <= 0 for x in alpha):
        raise ValueError("prior entries must be positive")
    total = math.lgamma(sum(alpha)) - math.lgamma(sum(f) + sum(alpha))
    for fk, ak in zip(f, alpha):
        total += math.lgamma(fk + ak) - math.lgamma(ak)
    return total


def p_dir(f, alpha) -> float:
    return math.exp(log_p_dir(f, alpha))


# ---------------------------------------------------------------------------
# CRP caches


@dataclass
class Table:
    tree: tuple
    tokens: tuple[str, ...]
    m: int
    dish_decisions: list = field(default_factory=list)


class AdaptorCache:
    """Seating state of one adaptor: tables, their dishes and customer counts."""

    def __init__(self, params: AdaptorParams):
        self.params = params
        self.tables: dict[int, Table] = {}
        self.by_yield: dict[tuple[str, ...], list[int]] = {}
        self.n = 0
        self._next_tid = 0

    @property
    def K(self) -> int:
        return len(self.tables)

    def occupancy(self) -> list[int]:
        return [self.tables[t].m for t in sorted(self.tables)]

    def matching(self, tokens: tuple[str, ...]) -> list[int]:
        return self.by_yield.get(tokens, [])

    def new_weight(self) -> float:
        if self.n == 0:
            return 1.0
        return (self.K * self.params.b + self.params.a) / (self.n + self.params.a)

    def table_weight(self, tid: int) -> float:
        return (self.tables[tid].m - self.params.b) / (self.n + self.params.a)

    def open_table(self, tree: tuple, tokens: tuple[str, ...]) -> int:
        tid = self._next_tid
        self._next_tid += 1
        self.tables[tid] = Table(tree=tree, tokens=tokens, m=1)
        self.by_yield.setdefault(tokens, []).append(tid)
        self.n += 1
        return tid

    def seat(self, tid: int) -> None:
        self.tables[tid].m += 1
        self.n += 1

    def unseat(self, tid: int) -> Table | None:
        """Remove one customer; return the table record if it emptied."""
        tbl = self.tables[tid]
        tbl.m -= 1
        self.n -= 1
        if tbl.m == 0:
            del self.tables[tid]
            ids = self.by_yield[tbl.tokens]
            ids.remove(tid)
            if not ids:
                del self.by_yield[tbl.tokens]
            return tbl
        return None


def crp_seat_prob(cache: AdaptorCache, choice) -> float:
    """Probability that the next customer picks ``choice`` (a table id or
    ``NEW_TABLE``) given the cache's current seating."""
    if choice == NEW_TABLE:
        return cache.new_weight()
    if choice not in cache.tables:
        raise ValueError(f"table {choice!r} is not occupied")
    return cache.table_weight(choice)


# ---------------------------------------------------------------------------
# compiled form used by the inside chart

_SYM_LEVEL = 0
_SYM_TOKEN = 1
_SYM_WILD = 2


class _Compiled:
    def __init__(self, grammar: Grammar):
        self.grammar = grammar
        nts = sorted(grammar.nonterminals)
        self.main_level = {nt: i for i, nt in enumerate(nts)}
        self.base_level = {}
        n = len(nts)
        for c in sorted(grammar.adaptors):
            self.base_level[c] = n
            n += 1
        self.n_levels = n

        def ref(sym: str):
            if sym == WILDCARD:
                return (_SYM_WILD, None)
            if sym in grammar.nonterminals:
                return (_SYM_LEVEL, self.main_level[sym])
            return (_SYM_TOKEN, sym)

        self.lex: list[list[tuple[int, object]]] = [[] for _ in range(n)]
        self.unary: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        self.nary: list[list[tuple[int, tuple]]] = [[] for _ in range(n)]
        for rid, rule in enumerate(grammar.rules):
            home = self.base_level.get(rule.head, self.main_level[rule.head])
            syms = tuple(ref(s) for s in rule.rhs)
            if len(syms) == 1:
                kind, val = syms[0]
                if kind == _SYM_LEVEL:
                    self.unary[home].append((rid, val))
                else:
                    self.lex[home].append((rid, syms[0]))
            else:
                self.nary[home].append((rid, syms))

        # same-span dependency order: unary children and adaptor bases first
        edges: dict[int, set[int]] = {i: set() for i in range(n)}
        for lvl in range(n):
            for _, child in self.unary[lvl]:
                edges[lvl].add(child)
        for c in grammar.adaptors:
            edges[self.main_level[c]].add(self.base_level[c])
        order: list[int] = []
        state: dict[int, int] = {}

        def visit(node):
            mark = state.get(node, 0)
            if mark == 1:
                raise GrammarError("grammar contains a unary rule cycle")
            if mark == 2:
                return
            state[node] = 1
            for child in edges[node]:
                visit(child)
            state[node] = 2
            order.append(node)

        for lvl in range(n):
            visit(lvl)
        self.topo = order
        self.adapted_at = {
            self.main_level[c]: (c, self.base_level[c]) for c in grammar.adaptors
        }
        self.head_of = [r.head for r in grammar.rules]
        self.alpha = [r.alpha for r in grammar.rules]
        self.alpha_tot = {
            nt: sum(grammar.rules[rid].alpha for rid in grammar.rule_ids(nt))
            for nt in grammar.nonterminals
        }
        self.start_level = self.main_level[grammar.start]
        self.known_terminals = grammar.terminals
        self.has_wildcard = grammar.has_wildcard


def tree_yield(tree: tuple) -> tuple[str, ...]:
    out: list[str] = []
    stack = [tree]
    while stack:
        node = stack.pop()
        for child in reversed(node[1]):
            if isinstance(child, str):
                out.append(child)
            else:
                stack.append(child)
    return tuple(out)


# ---------------------------------------------------------------------------
# grammar state


@dataclass
class ParseRecord:
    """A stored parse: the full derivation tree plus one committed seating
    decision per top-reachable adaptor node, in walk order."""

    tree: tuple
    decisions: list[tuple]


class AdaptedGrammarState:
    def __init__(self, grammar: Grammar):
        self.grammar = grammar
        self.compiled = _Compiled(grammar)
        self.caches: dict[str, AdaptorCache] = {
            c: AdaptorCache(p) for c, p in grammar.adaptors.items()
        }
        self.f = [0] * len(grammar.rules)
        self.f_tot = {nt: 0 for nt in grammar.nonterminals}
        self.parses: dict[str, ParseRecord] = {}
        self.yields: dict[str, tuple[str, ...]] = {}
        self.skipped: set[str] = set()
        # proposals accepted because the reverse move had zero proposal
        # probability (orphaned within-parse table sharing)
        self.forced_accepts = 0

    # -- rule bookkeeping ---------------------------------------------------

    def theta(self, rid: int) -> float:
        head = self.compiled.head_of[rid]
        return (self.f[rid] + self.compiled.alpha[rid]) / (
            self.f_tot[head] + self.compiled.alpha_tot[head]
        )

    def _bump_rule(self, rid: int, delta: int) -> None:
        self.f[rid] += delta
        self.f_tot[self.compiled.head_of[rid]] += delta

    def _is_adaptor_node(self, node: tuple) -> bool:
        return self.compiled.head_of[node[0]] in self.caches

    # -- insertion ----------------------------------------------------------

    def insert(self, pid: str, tree: tuple, flat_decisions: list[tuple]):
        """Insert an augmented parse; returns (committed record, log prob).

        ``flat_decisions`` is the proposal-order list: one entry per adaptor
        node reached, descending into dishes after a ("new", _) decision.
        The log probability is the exact joint-probability ratio of adding
        this parse (adaptor-headed rule draws carry no Dirichlet factor).
        """
        it = iter(flat_decisions)
        concrete: list[tuple] = []
        logp = 0.0

        def score_rule(rid: int) -> None:
            nonlocal logp
            head = self.compiled.head_of[rid]
            if head not in self.caches:
                logp += math.log(
                    (self.f[rid] + self.compiled.alpha[rid])
                    / (self.f_tot[head] + self.compiled.alpha_tot[head])
                )
            self._bump_rule(rid, +1)

        def walk_dish(node: tuple, sink: list[tuple]) -> None:
            nonlocal logp
            rid = node[0]
            score_rule(rid)
            for child in node[1]:
                if isinstance(child, str):
                    continue
                if self._is_adaptor_node(child):
                    seat(child, sink)
                else:
                    walk_dish(child, sink)

        def seat(node: tuple, sink: list[tuple]) -> None:
            nonlocal logp
            head = self.compiled.head_of[node[0]]
            cache = self.caches[head]
            kind, ref = next(it)
            if kind == "sit":
                tid = ref
            elif kind == "sitlocal":
                tid = concrete[ref][1]
            else:
                tid = None
            if tid is not None:
                logp += math.log(cache.table_weight(tid))
                cache.seat(tid)
                concrete.append(("sit", tid))
                sink.append(("sit", tid))
                return
            logp += math.log(cache.new_weight())
            tid = cache.open_table(node, tree_yield(node))
            concrete.append(("new", tid))
            sink.append(("new", tid))
            dish_sink = self.caches[head].tables[tid].dish_decisions
            rid = node[0]
            score_rule(rid)
            for child in node[1]:
                if isinstance(child, str):
                    continue
                if self._is_adaptor_node(child):
                    seat(child, dish_sink)
                else:
                    walk_dish(child, dish_sink)

        top: list[tuple] = []

        def walk_top(node: tuple) -> None:
            if self._is_adaptor_node(node):
                seat(node, top)
                return
            score_rule(node[0])
            for child in node[1]:
                if not isinstance(child, str):
                    walk_top(child)

        walk_top(tree)
        leftovers = sum(1 for _ in it)
        if leftovers:
            raise ValueError(f"{leftovers} unconsumed seating decisions")
        record = ParseRecord(tree=tree, decisions=top)
        self.parses[pid] = record
        return record, logp

    # -- removal ------------------------------------------------------------

    def remove(self, pid: str) -> list[tuple]:
        """Remove a stored parse; returns the flat decision list rewritten
        against the reduced state (deleted tables become "new" openings,
        within-parse co-seatings become "sitlocal" back references)."""
        record = self.parses.pop(pid)
        deleted: dict[tuple[str, int], Table] = {}

        def delete_dish(head: str, tbl: Table) -> None:
            it = iter(tbl.dish_decisions)

            def walk(node: tuple) -> None:
                self._bump_rule(node[0], -1)
                for child in node[1]:
                    if isinstance(child, str):
                        continue
                    if self._is_adaptor_node(child):
                        chead = self.compiled.head_of[child[0]]
                        _, tid = next(it)
                        emptied = self.caches[chead].unseat(tid)
                        if emptied is not None:
                            deleted[(chead, tid)] = emptied
                            delete_dish(chead, emptied)
                    else:
                        walk(child)

            walk(tbl.tree)

        # phase A: decrement customers and rules, cascading table deletions
        top_it = iter(record.decisions)

        def remove_top(node: tuple) -> None:
            if self._is_adaptor_node(node):
                head = self.compiled.head_of[node[0]]
                _, tid = next(top_it)
                emptied = self.caches[head].unseat(tid)
                if emptied is not None:
                    deleted[(head, tid)] = emptied
                    delete_dish(head, emptied)
                return
            self._bump_rule(node[0], -1)
            for child in node[1]:
                if not isinstance(child, str):
                    remove_top(child)

        remove_top(record.tree)

        # phase B: rewrite the decision list against the surviving tables
        flat: list[tuple] = []
        first_ref: dict[tuple[str, int], int] = {}
        dec_it = iter(record.decisions)

        def rewrite_seat(node: tuple, source_it) -> None:
            head = self.compiled.head_of[node[0]]
            _, tid = next(source_it)
            key = (head, tid)
            if tid in self.caches[head].tables:
                flat.append(("sit", tid))
                return
            if key in first_ref:
                flat.append(("sitlocal", first_ref[key]))
                return
            first_ref[key] = len(flat)
            flat.append(("new", None))
            dish_it = iter(deleted[key].dish_decisions)
            for child in node[1]:
                if isinstance(child, str):
                    continue
                rewrite_inside(child, dish_it)

        def rewrite_inside(node: tuple, source_it) -> None:
            if self._is_adaptor_node(node):
                rewrite_seat(node, source_it)
                return
            for child in node[1]:
                if not isinstance(child, str):
                    rewrite_inside(child, source_it)

        def rewrite_top(node: tuple) -> None:
            if self._is_adaptor_node(node):
                rewrite_seat(node, dec_it)
                return
            for child in node[1]:
                if not isinstance(child, str):
                    rewrite_top(child)

        rewrite_top(record.tree)
        return flat

    # -- whole-state probability and audit ------------------------------------

    def joint_prob(self) -> float:
        """Log probability of all stored trees: Dirichlet factor per
        non-adapted nonterminal times a Pitman-Yor factor per adaptor."""
        total = 0.0
        for nt in sorted(self.grammar.nonterminals):
            if nt in self.caches:
                continue
            rids = self.grammar.rule_ids(nt)
            total += log_p_dir(
                [self.f[r] for r in rids], [self.compiled.alpha[r] for r in rids]
            )
        for c in sorted(self.caches):
            cache = self.caches[c]
            total += log_p_pyp(cache.occupancy(), cache.params.a, cache.params.b)
        return total

    def audit(self) -> None:
        """Recompute rule counts and seatings from stored parses; raise on
        any mismatch."""
        exp_f = [0] * len(self.f)
        exp_m: dict[tuple[str, int], int] = {}

        def tally_outside(node: tuple) -> None:
            if self._is_adaptor_node(node):
                return
            exp_f[node[0]] += 1
            for child in node[1]:
                if not isinstance(child, str):
                    tally_outside(child)

        for pid, record in self.parses.items():
            if tree_yield(record.tree) != self.yields.get(pid):
                raise ValueError(f"yield mismatch for stored parse {pid!r}")
            tally_outside(record.tree)
            it = iter(record.decisions)

            def count_seats(node: tuple) -> None:
                if self._is_adaptor_node(node):
                    head = self.compiled.head_of[node[0]]
                    _, tid = next(it)
                    if tid not in self.caches[head].tables:
                        raise ValueError(f"parse {pid!r} seats at unknown table")
                    key = (head, tid)
                    exp_m[key] = exp_m.get(key, 0) + 1
                    return
                for child in node[1]:
                    if not isinstance(child, str):
                        count_seats(child)

            count_seats(record.tree)

        for c, cache in self.caches.items():
            for tid, tbl in cache.tables.items():
                if tree_yield(tbl.tree) != tbl.tokens:
                    raise ValueError("cached dish yield mismatch")
                exp_f[tbl.tree[0]] += 1

                def tally_dish(node: tuple) -> None:
                    for child in node[1]:
                        if isinstance(child, str):
                            continue
                        if self._is_adaptor_node(child):
                            continue
                        exp_f[child[0]] += 1
                        tally_dish(child)

                tally_dish(tbl.tree)
                it = iter(tbl.dish_decisions)

                def dish_seats(node: tuple) -> None:
                    for child in node[1]:
                        if isinstance(child, str):
                            continue
                        if self._is_adaptor_node(child):
                            chead = self.compiled.head_of[child[0]]
                            _, tid2 = next(it)
                            if tid2 not in self.caches[chead].tables:
                                raise ValueError("dish seats at unknown table")
                            key = (chead, tid2)
                            exp_m[key] = exp_m.get(key, 0) + 1
                        else:
                            dish_seats(child)

                dish_seats(tbl.tree)

        if exp_f != self.f:
            raise ValueError("rule count audit failed")
        for nt in self.grammar.nonterminals:
            want = sum(exp_f[r] for r in self.grammar.rule_ids(nt))
            if want != self.f_tot[nt]:
                raise ValueError(f"rule total audit failed for {nt}")
        for c, cache in self.caches.items():
            got = {(c, tid): tbl.m for tid, tbl in cache.tables.items()}
            want = {k: v for k, v in exp_m.items() if k[0] == c}
            if got != want:
                raise ValueError(f"seating audit failed for adaptor {c}")
            if cache.n != sum(tbl.m for tbl in cache.tables.values()):
                raise ValueError(f"customer total audit failed for adaptor {c}")

    def canonical(self):
        """Order-independent snapshot for state equality checks in tests."""
        tables = {
            c: sorted(
                (repr(tbl.tree), tbl.m) for tbl in cache.tables.values()
            )
            for c, cache in self.caches.items()
        }
        parses = {pid: repr(rec.tree) for pid, rec in self.parses.items()}
        return (tables, parses, tuple(self.f))

    # -- checkpointing --------------------------------------------------------

    def to_checkpoint(self) -> dict:
        def enc_tree(node):
            return [
                node[0],
                [c if isinstance(c, str) else enc_tree(c) for c in node[1]],
            ]

        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "caches": {
                c: {
                    "n": cache.n,
                    "next_tid": cache._next_tid,
                    "tables": [
                        {
                            "tid": tid,
                            "tree": enc_tree(tbl.tree),
                            "m": tbl.m,
                            "dish_decisions": [list(d) for d in tbl.dish_decisions],
                        }
                        for tid, tbl in sorted(cache.tables.items())
                    ],
                }
                for c, cache in sorted(self.caches.items())
            },
            "f": list(self.f),
            "parses": {
                pid: {
                    "tree": enc_tree(rec.tree),
                    "decisions": [list(d) for d in rec.decisions],
                }
                for pid, rec in sorted(self.parses.items())
            },
            "yields": {pid: list(t) for pid, t in sorted(self.yields.items())},
            "skipped": sorted(self.skipped),
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_checkpoint(), fh, sort_keys=True, separators=(",", ":"))
            fh.write("\n")

    @classmethod
    def from_checkpoint(cls, grammar: Grammar, data: dict) -> "AdaptedGrammarState":
        if data.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not a grammar state checkpoint")
        if data.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {data.get('version')}")

        def dec_tree(node):
            return (
                node[0],
                tuple(c if isinstance(c, str) else dec_tree(c) for c in node[1]),
            )

        state = cls(grammar)
        for c, cdata in data["caches"].items():
            cache = state.caches[c]
            cache.n = cdata["n"]
            cache._next_tid = cdata["next_tid"]
            for t in cdata["tables"]:
                tree = dec_tree(t["tree"])
                tokens = tree_yield(tree)
                cache.tables[t["tid"]] = Table(
                    tree=tree,
                    tokens=tokens,
                    m=t["m"],
                    dish_decisions=[tuple(d) for d in t["dish_decisions"]],
                )
                cache.by_yield.setdefault(tokens, []).append(t["tid"])
        state.f = list(data["f"])
        for nt in grammar.nonterminals:
            state.f_tot[nt] = sum(state.f[r] for r in grammar.rule_ids(nt))
        for pid, pdata in data["parses"].items():
            state.parses[pid] = ParseRecord(
                tree=dec_tree(pdata["tree"]),
                decisions=[tuple(d) for d in pdata["decisions"]],
            )
        state.yields = {pid: tuple(t) for pid, t in data["yields"].items()}
        state.skipped = set(data["skipped"])
        return state


def load_state(grammar: Grammar, path) -> AdaptedGrammarState:
    with open(path, encoding="utf-8") as fh:
        return AdaptedGrammarState.from_checkpoint(grammar, json.load(fh))


# ---------------------------------------------------------------------------
# inside chart


class Chart:
    """Inside probabilities of the proposal PCFG over one token sequence.

    Cell ``(level, i, j)`` holds the total probability that the level derives
    tokens ``i..j``; adaptor levels mix cached-table pseudo-rules with the
    base expansion weighted by the new-table probability.
    """

    def __init__(self, state: AdaptedGrammarState, tokens: tuple[str, ...]):
        if not tokens:
            raise UnparseableYieldError("empty yield")
        comp = state.compiled
        if not comp.has_wildcard:
            unknown = [t for t in tokens if t not in comp.known_terminals]
            if unknown:
                raise UnparseableYieldError(
                    f"tokens outside the grammar's terminals: {unknown}"
                )
        self.state = state
        self.comp = comp
        self.tokens = tokens
        self.theta = [state.theta(rid) for rid in range(len(state.grammar.rules))]
        n = len(tokens)
        self.vals: dict[tuple[int, int], list[float]] = {}
        for length in range(1, n + 1):
            for i in range(0, n - length + 1):
                self._fill_cell(i, i + length)

    def _sym_value(self, sym, i: int, j: int) -> float:
        kind, val = sym
        if kind == _SYM_LEVEL:
            return self.vals[(i, j)][val]
        if j - i != 1:
            return 0.0
        if kind == _SYM_WILD:
            return 1.0
        return 1.0 if self.tokens[i] == val else 0.0

    def _nary_sum(self, syms, idx: int, i: int, j: int) -> float:
        if idx == len(syms) - 1:
            return self._sym_value(syms[idx], i, j)
        remaining = len(syms) - idx - 1
        total = 0.0
        kind, _ = syms[idx]
        if kind != _SYM_LEVEL:
            v = self._sym_value(syms[idx], i, i + 1)
            if v:
                total += v * self._nary_sum(syms, idx + 1, i + 1, j)
            return total
        for m in range(i + 1, j - remaining + 1):
            v = self._sym_value(syms[idx], i, m)
            if v:
                total += v * self._nary_sum(syms, idx + 1, m, j)
        return total

    def _fill_cell(self, i: int, j: int) -> None:
        comp = self.comp
        vals = [0.0] * comp.n_levels
        self.vals[(i, j)] = vals
        if j - i == 1:
            tok = self.tokens[i]
            for lvl in range(comp.n_levels):
                for rid, sym in comp.lex[lvl]:
                    kind, val = sym
                    if kind == _SYM_WILD or (kind == _SYM_TOKEN and val == tok):
                        vals[lvl] += self.theta[rid]
        if j - i >= 2:
            for lvl in range(comp.n_levels):
                for rid, syms in comp.nary[lvl]:
                    s = self._nary_sum(syms, 0, i, j)
                    if s:
                        vals[lvl] += self.theta[rid] * s
        for lvl in comp.topo:
            for rid, child in comp.unary[lvl]:
                if vals[child]:
                    vals[lvl] += self.theta[rid] * vals[child]
            adapted = comp.adapted_at.get(lvl)
            if adapted is not None:
                c, base = adapted
                cache = self.state.caches[c]
                total = cache.new_weight() * vals[base]
                for tid in cache.matching(self.tokens[i:j]):
                    total += cache.table_weight(tid)
                vals[lvl] = total

    @property
    def root_value(self) -> float:
        n = len(self.tokens)
        return self.vals[(0, n)][self.comp.start_level]

    def value(self, nonterminal: str, i: int, j: int) -> float:
        """Inside value of a nonterminal (adaptor nonterminals at their
        adapted level) over span ``i..j``."""
        return self.vals[(i, j)][self.comp.main_level[nonterminal]]

    def base_value(self, nonterminal: str, i: int, j: int) -> float:
        lvl = self.comp.base_level.get(
            nonterminal, self.comp.main_level[nonterminal]
        )
        return self.vals[(i, j)][lvl]


def inside_chart(state: AdaptedGrammarState, tokens) -> Chart:
    return Chart(state, tuple(tokens))


# ---------------------------------------------------------------------------
# sampling from the chart


def _sample_option(options, weights, rng: random.Random):
    total = sum(weights)
    r = rng.random() * total
    acc = 0.0
    for opt, w in zip(options, weights):
        acc += w
        if r < acc:
            return opt
    return options[-1]


def _nary_compositions(chart: Chart, syms, idx: int, i: int, j: int, prefix, out):
    """All split-point tuples of ``syms`` over span (i, j) with their weights."""
    if idx == len(syms) - 1:
        v = chart._sym_value(syms[idx], i, j)
        if v:
            out.append((prefix + (i,), v))
        return
    remaining = len(syms) - idx - 1
    kind, _ = syms[idx]
    if kind != _SYM_LEVEL:
        v = chart._sym_value(syms[idx], i, i + 1)
        if v:
            _nary_compositions(chart, syms, idx + 1, i + 1, j, prefix + (i,), out)
        return
    for m in range(i + 1, j - remaining + 1):
        v = chart._sym_value(syms[idx], i, m)
        if v:
            sub: list = []
            _nary_compositions(chart, syms, idx + 1, m, j, prefix + (i,), sub)
            for positions, weight in sub:
                out.append((positions, v * weight))


def sample_from_chart(chart: Chart, rng: random.Random):
    """Draw one augmented parse top-down; returns (tree, flat decisions)."""
    comp = chart.comp
    state = chart.state
    decisions: list[tuple] = []

    def sample_level(lvl: int, i: int, j: int):
        adapted = comp.adapted_at.get(lvl)
        if adapted is not None:
            c, base = adapted
            cache = state.caches[c]
            options: list = []
            weights: list[float] = []
            for tid in sorted(cache.matching(chart.tokens[i:j])):
                options.append(("table", tid))
                weights.append(cache.table_weight(tid))
            base_val = chart.vals[(i, j)][base]
            if base_val > 0.0:
                options.append(("new", base))
                weights.append(cache.new_weight() * base_val)
            if not options:
                raise UnparseableYieldError("no derivation at adaptor node")
            choice = _sample_option(options, weights, rng)
            if choice[0] == "table":
                decisions.append(("sit", choice[1]))
                return state.caches[c].tables[choice[1]].tree
            decisions.append(("new", None))
            return sample_level(base, i, j)

        options = []
        weights = []
        if j - i == 1:
            tok = chart.tokens[i]
            for rid, sym in comp.lex[lvl]:
                kind, val = sym
                if kind == _SYM_WILD or (kind == _SYM_TOKEN and val == tok):
                    options.append(("lex", rid))
                    weights.append(chart.theta[rid])
        for rid, child in comp.unary[lvl]:
            v = chart.vals[(i, j)][child]
            if v > 0.0:
                options.append(("un", rid, child))
                weights.append(chart.theta[rid] * v)
        if j - i >= 2:
            for rid, syms in comp.nary[lvl]:
                combos: list = []
                _nary_compositions(chart, syms, 0, i, j, (), combos)
                for positions, weight in combos:
                    options.append(("nary", rid, syms, positions))
                    weights.append(chart.theta[rid] * weight)
        if not options:
            raise UnparseableYieldError(f"no derivation for span {i}:{j}")
        choice = _sample_option(options, weights, rng)
        if choice[0] == "lex":
            return (choice[1], (chart.tokens[i],))
        if choice[0] == "un":
            return (choice[1], (sample_level(choice[2], i, j),))
        _, rid, syms, positions = choice
        bounds = list(positions) + [j]
        children = []
        for k, sym in enumerate(syms):
            s, e = bounds[k], bounds[k + 1]
            kind, val = sym
            if kind == _SYM_LEVEL:
                children.append(sample_level(val, s, e))
            else:
                children.append(chart.tokens[s])
        return (rid, tuple(children))

    tree = sample_level(comp.start_level, 0, len(chart.tokens))
    return tree, decisions


def eval_log_q(chart: Chart, tree: tuple, flat_decisions: list[tuple]) -> float:
    """Log probability that the chart's top-down sampler produces this
    augmented parse. Evaluate before mutating the state."""
    comp = chart.comp
    state = chart.state
    it = iter(flat_decisions)
    logw = 0.0

    def walk(node: tuple, at_adaptor: bool) -> bool:
        nonlocal logw
        rid = node[0]
        head = comp.head_of[rid]
        if head in state.caches and not at_adaptor:
            cache = state.caches[head]
            kind, ref = next(it)
            if kind == "sit":
                logw += math.log(cache.table_weight(ref))
                return True
            if kind == "sitlocal":
                return False  # unreachable by the independent proposal
            logw += math.log(cache.new_weight())
            return walk(node, True)
        logw += math.log(chart.theta[rid])
        for child in node[1]:
            if isinstance(child, str):
                continue
            if not walk(child, False):
                return False
        return True

    if not walk(tree, False):
        return float("-inf")
    return logw - math.log(chart.root_value)


# ---------------------------------------------------------------------------
# Metropolis-Hastings updates


def sample_parse_mh(
    state: AdaptedGrammarState,
    pid: str,
    tokens,
    rng: random.Random,
) -> bool:
    """Resample one phrase's parse; returns True when the phrase is parseable.

    The stored parse (if any) is removed, a proposal is drawn from the inside
    chart of the reduced state and accepted with the usual ratio of joint
    probabilities and proposal densities; first-time phrases are accepted
    unconditionally.
    """
    tokens = tuple(tokens)
    state.yields[pid] = tokens
    old_flat = None
    old_tree = None
    if pid in state.parses:
        old_tree = state.parses[pid].tree
        old_flat = state.remove(pid)

    try:
        chart = inside_chart(state, tokens)
    except UnparseableYieldError:
        chart = None
    if chart is None or chart.root_value <= 0.0:
        if old_flat is not None:
            state.insert(pid, old_tree, old_flat)
        else:
            state.skipped.add(pid)
        return False

    new_tree, new_flat = sample_from_chart(chart, rng)

    if old_flat is None:
        state.insert(pid, new_tree, new_flat)
        return True
    if new_tree == old_tree and new_flat == old_flat:
        state.insert(pid, old_tree, old_flat)
        return True

    log_q_new = eval_log_q(chart, new_tree, new_flat)
    log_q_old = eval_log_q(chart, old_tree, old_flat)

    _, log_ins_old = state.insert(pid, old_tree, old_flat)
    old_flat = state.remove(pid)
    _, log_ins_new = state.insert(pid, new_tree, new_flat)

    if log_q_old == float("-inf"):
        # the reverse move cannot be proposed (a within-parse table sharing
        # was orphaned); keep the chain moving rather than freezing it
        state.forced_accepts += 1
        return True
    log_ratio = (log_ins_new + log_q_old) - (log_ins_old + log_q_new)
    if log_ratio >= 0.0 or math.log(rng.random()) < log_ratio:
        return True
    state.remove(pid)
    state.insert(pid, old_tree, old_flat)
    return True


def run_sampler(
    phrases,
    grammar: Grammar,
    iterations: int,
    seed: int,
) -> AdaptedGrammarState:
    """Iterate MH over all phrases for the given number of sweeps.

    ``phrases`` is a sequence of (phrase_id, token sequence) pairs; order of
    visits is one fixed shuffle drawn from the seed.
    """
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    state = AdaptedGrammarState(grammar)
    rng = random.Random(seed)
    items = [(pid, tuple(tokens)) for pid, tokens in phrases]
    order = list(range(len(items)))
    rng.shuffle(order)
    for _ in range(iterations):
        for idx in order:
            pid, tokens = items[idx]
            if pid in state.skipped:
                continue
            sample_parse_mh(state, pid, tokens, rng)
    return state
