"""ET0L/EDT0L systems: representation, parallel derivation and bounded enumeration.

A system rewrites every position of a sentential form simultaneously with
rules drawn from one table per step; a symbol with no explicit rule in the
chosen table is rewritten to itself (the implicit identity convention).
Enumeration is a capped breadth-first closure over sentential forms and is
complete only relative to its caps, which the ``truncated`` flag records.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Literal, Optional

from .core import POISON, EPSILON, GrammarError, Symbol, Word, fresh_symbol

Kind = Literal["ET0L", "EDT0L"]


class CapsInvalid(GrammarError):
    pass


@dataclass(frozen=True)
class Table:
    """One table: a finite set of (symbol, replacement word) rules."""

    name: str
    rules: tuple[tuple[Symbol, Word], ...]

    @cached_property
    def by_lhs(self) -> dict[Symbol, tuple[Word, ...]]:
        out: dict[Symbol, list[Word]] = {}
        for lhs, rhs in self.rules:
            out.setdefault(lhs, []).append(rhs)
        return {lhs: tuple(ws) for lhs, ws in out.items()}

    @cached_property
    def lhs_symbols(self) -> frozenset[Symbol]:
        return frozenset(lhs for lhs, _ in self.rules)

    def choices(self, c: Symbol) -> tuple[Word, ...]:
        """Replacement words for ``c``, falling back to the implicit identity."""
        return self.by_lhs.get(c) or ((c,),)


def table(name: str, rules: Iterable[tuple[Symbol, Word]]) -> Table:
    """Canonical table constructor: rules deduplicated and sorted by (lhs, rhs)."""
    return Table(name, tuple(sorted(set(rules))))


@dataclass(frozen=True)
class LSystem:
    alphabet: frozenset[Symbol]
    terminals: frozenset[Symbol]
    tables: tuple[Table, ...]
    axioms: tuple[Word, ...]
    kind: Kind = "ET0L"

    @cached_property
    def nonterminals(self) -> frozenset[Symbol]:
        return self.alphabet - self.terminals

    @cached_property
    def max_rhs_len(self) -> int:
        return max((len(rhs) for t in self.tables for _, rhs in t.rules), default=0)

    @cached_property
    def tables_touching(self) -> dict[Symbol, tuple[int, ...]]:
        """Index: symbol -> tables holding an explicit rule for it."""
        out: dict[Symbol, list[int]] = {}
        for i, t in enumerate(self.tables):
            for c in t.lhs_symbols:
                out.setdefault(c, []).append(i)
        return {c: tuple(ids) for c, ids in out.items()}


def lsystem(
    alphabet: Iterable[Symbol],
    terminals: Iterable[Symbol],
    tables: Iterable[Table],
    axioms: Iterable[Word],
    kind: Kind = "ET0L",
) -> LSystem:
    """Canonical constructor: axioms deduplicated and sorted length-then-lex."""
    if kind not in ("ET0L", "EDT0L"):
        raise GrammarError(f"unknown system kind {kind!r}")
    ax = tuple(sorted(set(axioms), key=lambda w: (len(w), w)))
    return LSystem(frozenset(alphabet), frozenset(terminals), tuple(tables), ax, kind)


@dataclass(frozen=True)
class Issue:
    severity: Literal["error", "warning"]
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[Issue, ...]

    @property
    def ok(self) -> bool:
        return all(i.severity != "error" for i in self.issues)

    @property
    def errors(self) -> tuple[Issue, ...]:
        return tuple(i for i in self.issues if i.severity == "error")


def validate(h: LSystem) -> ValidationReport:
    """Report alphabet-closure violations, determinism violations and dead symbols."""
    issues: list[Issue] = []
    if not h.terminals <= h.alphabet:
        extra = sorted(h.terminals - h.alphabet)
        issues.append(Issue("error", f"terminals not in alphabet: {extra}"))
    for w in h.axioms:
        for c in w:
            if c not in h.alphabet:
                issues.append(Issue("error", f"axiom symbol {c!r} not in alphabet"))
    for t in h.tables:
        for lhs, rhs in t.rules:
            if lhs not in h.alphabet:
                issues.append(Issue("error", f"table {t.name}: rule symbol {lhs!r} not in alphabet"))
            for c in rhs:
                if c not in h.alphabet:
                    issues.append(
                        Issue("error", f"table {t.name}: rule {lhs!r} uses {c!r} not in alphabet")
                    )
    if h.kind == "EDT0L":
        for t in h.tables:
            for lhs, ws in t.by_lhs.items():
                if len(ws) > 1:
                    issues.append(
                        Issue("error", f"table {t.name}: {len(ws)} rules for {lhs!r} in an EDT0L system")
                    )
    unreachable = h.nonterminals - reachable_symbols(h)
    if unreachable:
        issues.append(Issue("warning", f"unreachable nonterminals: {sorted(unreachable)}"))
    return ValidationReport(tuple(issues))


def step(h: LSystem, u: Word, table_index: int) -> frozenset[Word]:
    """All one-step successors of ``u`` under table ``table_index``."""
    t = h.tables[table_index]
    out, truncated = _successors(t, u, None)
    assert not truncated
    return frozenset(out)


def _successors(
    t: Table,
    form: Word,
    max_len: Optional[int],
    dead: frozenset[Symbol] = frozenset(),
) -> tuple[list[Word], bool]:
    """Successor forms under ``t``; prunes partial products once they exceed ``max_len``.

    Choices that introduce a symbol from ``dead`` (provably unable to reach a
    terminal word) are skipped: the forms they build cannot contribute words.
    """
    choice_lists = []
    for c in form:
        ch = t.choices(c)
        if dead:
            ch = tuple(rhs for rhs in ch if not dead.intersection(rhs))
            if not ch:
                return [], False
        choice_lists.append(ch)
    if all(len(ch) == 1 for ch in choice_lists):
        flat: list[Symbol] = []
        for ch in choice_lists:
            flat.extend(ch[0])
        if max_len is not None and len(flat) > max_len:
            return [], True
        return [tuple(flat)], False

    results: list[Word] = []
    truncated = False
    # Iterative product over positions with prefix-length pruning.
    stack: list[tuple[int, Word]] = [(0, EPSILON)]
    while stack:
        idx, prefix = stack.pop()
        if idx == len(choice_lists):
            results.append(prefix)
            continue
        for rhs in choice_lists[idx]:
            ext = prefix + rhs
            if max_len is not None and len(ext) > max_len:
                truncated = True
                continue
            stack.append((idx + 1, ext))
    return results, truncated


@dataclass(frozen=True)
class EnumerationCaps:
    max_word_len: int
    max_form_len: int
    max_steps: Optional[int] = None

    def check(self) -> None:
        if self.max_form_len < self.max_word_len:
            raise CapsInvalid(
                f"max_form_len {self.max_form_len} < max_word_len {self.max_word_len}"
            )

    def widened(self, extra: int = 2) -> "EnumerationCaps":
        return EnumerationCaps(self.max_word_len, self.max_form_len + extra, self.max_steps)


@dataclass(frozen=True)
class EnumerationResult:
    words: frozenset[Word]
    truncated: bool
    explored: int


def enumerate_words(h: LSystem, caps: EnumerationCaps) -> EnumerationResult:
    """Breadth-first closure over sentential forms within the caps.

    Sound unconditionally: every returned word is derivable from an axiom.
    Complete only relative to the caps; ``truncated`` is set as soon as some
    successor form had to be discarded.
    """
    caps.check()
    dead = h.alphabet - productive_symbols(h)
    visited: set[Word] = set()
    words: set[Word] = set()
    truncated = False
    frontier: list[Word] = []
    for w in h.axioms:
        if len(w) > caps.max_form_len:
            truncated = True
        elif w not in visited and not dead.intersection(w):
            visited.add(w)
            frontier.append(w)
    terminals = h.terminals
    touching = h.tables_touching
    steps = 0
    while frontier:
        if caps.max_steps is not None and steps >= caps.max_steps:
            truncated = True
            break
        steps += 1
        next_frontier: list[Word] = []
        for form in frontier:
            table_ids = sorted({i for c in set(form) for i in touching.get(c, ())})
            for i in table_ids:
                succ, trunc = _successors(h.tables[i], form, caps.max_form_len, dead)
                truncated = truncated or trunc
                for v in succ:
                    if v not in visited:
                        visited.add(v)
                        next_frontier.append(v)
        frontier = next_frontier
    for w in visited:
        if len(w) <= caps.max_word_len and all(c in terminals for c in w):
            words.add(w)
    return EnumerationResult(frozenset(words), truncated, len(visited))


def contains_bounded(
    h: LSystem, w: Word, caps: EnumerationCaps
) -> Literal["yes", "no_within_caps"]:
    """Semi-decision of membership: 'yes' is definitive, absence is not."""
    caps.check()
    if len(w) > caps.max_word_len:
        raise CapsInvalid(f"word length {len(w)} exceeds max_word_len {caps.max_word_len}")
    return "yes" if w in enumerate_words(h, caps).words else "no_within_caps"


def stabilized_words(
    h: LSystem, caps: EnumerationCaps, widen: int = 2
) -> tuple[frozenset[Word], bool]:
    """Enumerate twice (form cap widened the second time); stable iff sets agree."""
    first = enumerate_words(h, caps)
    second = enumerate_words(h, caps.widened(widen))
    return first.words, first.words == second.words


def find_derivation(
    h: LSystem, target: Word, caps: EnumerationCaps
) -> Optional[list[tuple[Optional[int], Word]]]:
    """A replayable witness [(None, axiom), (table_idx, form), ...] ending at ``target``.

    Each recorded form is a member of step(h, previous, table_idx); returns
    None when the target is not reached within the caps.
    """
    caps.check()
    dead = h.alphabet - productive_symbols(h)
    parents: dict[Word, Optional[tuple[Word, int]]] = {}
    frontier: deque[Word] = deque()
    for w in h.axioms:
        if len(w) <= caps.max_form_len and w not in parents and not dead.intersection(w):
            parents[w] = None
            frontier.append(w)
    touching = h.tables_touching
    while frontier:
        form = frontier.popleft()
        if form == target:
            chain: list[tuple[Optional[int], Word]] = []
            cur: Optional[Word] = form
            while cur is not None:
                entry = parents[cur]
                chain.append((None if entry is None else entry[1], cur))
                cur = None if entry is None else entry[0]
            chain.reverse()
            return chain
        table_ids = sorted({i for c in set(form) for i in touching.get(c, ())})
        for i in table_ids:
            succ, _ = _successors(h.tables[i], form, caps.max_form_len, dead)
            for v in succ:
                if v not in parents:
                    parents[v] = (form, i)
                    frontier.append(v)
    return None


# ---------------------------------------------------------------------------
# System surgery: language-preserving cleanups used between construction stages.


def reachable_symbols(h: LSystem) -> frozenset[Symbol]:
    """Symbols reachable from the axioms through explicit rules (identity adds nothing)."""
    reached = {c for w in h.axioms for c in w}
    work = deque(reached)
    by_symbol: dict[Symbol, set[Symbol]] = {}
    for t in h.tables:
        for lhs, rhs in t.rules:
            by_symbol.setdefault(lhs, set()).update(rhs)
    while work:
        c = work.popleft()
        for d in by_symbol.get(c, ()):
            if d not in reached:
                reached.add(d)
                work.append(d)
    return frozenset(reached)


def productive_symbols(h: LSystem) -> frozenset[Symbol]:
    """Over-approximation of the symbols that can derive some terminal word.

    Uses the context-free condition (a rule whose right side is all-productive
    makes its left side productive), which ignores table synchronization and
    therefore never misses a truly productive symbol.
    """
    prod = set(h.terminals)
    rules = [(lhs, rhs) for t in h.tables for lhs, rhs in t.rules]
    changed = True
    while changed:
        changed = False
        for lhs, rhs in rules:
            if lhs not in prod and all(c in prod for c in rhs):
                prod.add(lhs)
                changed = True
    return frozenset(prod)


def poison_symbol(h: LSystem) -> Symbol:
    """The poison nonterminal for ``h`` (reusing an existing one when present)."""
    if POISON in h.alphabet and POISON not in h.terminals:
        return POISON
    return fresh_symbol(POISON, h.alphabet)


def simplify(h: LSystem) -> LSystem:
    """Drop unreachable symbols, normalize doomed rules to poison, dedupe tables.

    Language-preserving: removes only rules that can never fire, rewrites rules
    that can never contribute to a terminal word so that they fail immediately,
    and merges tables with identical rule sets.  Tables whose rules are all
    identities or poison steps are dropped outright.  Table names are
    regenerated canonically.
    """
    bot = poison_symbol(h)
    prev_shape = None
    while True:
        reach = reachable_symbols(h)
        prod = productive_symbols(h)
        new_tables: list[Table] = []
        seen_rules: set[tuple[tuple[Symbol, Word], ...]] = set()
        used_poison = False
        for t in h.tables:
            rules: set[tuple[Symbol, Word]] = set()
            for lhs, rhs in t.rules:
                if lhs not in reach:
                    continue
                if rhs and any(c not in prod for c in rhs):
                    rules.add((lhs, (bot,)))
                    used_poison = True
                else:
                    rules.add((lhs, rhs))
            canon = tuple(sorted(rules))
            if all(rhs == (lhs,) or rhs == (bot,) for lhs, rhs in canon):
                continue  # pure identity/poison table: contributes nothing
            if canon not in seen_rules:
                seen_rules.add(canon)
                new_tables.append(Table("", canon))
        axioms = tuple(w for w in h.axioms if all(c in prod for c in w))
        keep = {c for w in axioms for c in w}
        for t in new_tables:
            for lhs, rhs in t.rules:
                keep.add(lhs)
                keep.update(rhs)
        if used_poison:
            keep.add(bot)
        alphabet = (h.alphabet & keep) | h.terminals | ({bot} if used_poison else set())
        named = tuple(Table(f"t{i}", t.rules) for i, t in enumerate(new_tables))
        h = LSystem(frozenset(alphabet), h.terminals, named, axioms, h.kind)
        shape = (h.alphabet, tuple(t.rules for t in h.tables), h.axioms)
        if shape == prev_shape:
            return h
        prev_shape = shape
