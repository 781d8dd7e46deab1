"""Language-preserving transformations of L-systems, up to cyc and C^k.

The constructions follow the classical closure proofs (marker insertion,
regular intersection, factor annotation, the marked factor move), with two
systematic deviations needed for executable soundness and size:

* Poison totalization.  Under the implicit-identity convention, a symbol
  that is supposed to advance in lockstep with its context can silently
  stall (no explicit rule in the chosen table) and desynchronize the
  simulation, admitting words outside the target language.  Every table
  family built here therefore maps symbols that cannot legally act in that
  table to the dead nonterminal ``_BOT`` instead of leaving them to the
  implicit identity.  Poisoned branches can never produce terminal words.

* Size control.  Dead material is pruned between stages (see
  :func:`permclose.lsystem.simplify`), deterministic table families are
  indexed positionally rather than by full per-symbol choice functions, and
  state decompositions in the regular intersection are restricted to
  realizable effect pairs.  Constructions refuse to build more than
  ``table_limit`` tables (default one million) with :class:`TooLarge`.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import reduce
from itertools import permutations, product
from typing import Iterable, Mapping, Optional, Sequence

from .core import (
    EPSILON,
    POISON,
    GrammarError,
    Homomorphism,
    Symbol,
    UnknownSymbol,
    Word,
    check_symbol,
    fresh_symbol,
    identity_hom,
)
from .lsystem import (
    EnumerationCaps,
    LSystem,
    Table,
    enumerate_words,
    lsystem,
    poison_symbol,
    simplify,
)
from .regular import Dfa, complete_over, hash_order_dfa, hash_prefix_dfa

DEFAULT_TABLE_LIMIT = 1_000_000


class TerminalClash(GrammarError):
    pass


class HashInAlphabet(GrammarError):
    pass


class NotAbLanguage(GrammarError):
    pass


class TooLarge(GrammarError):
    pass


# ---------------------------------------------------------------------------
# Plumbing


def wrap_axioms(h: LSystem) -> LSystem:
    """Ensure every axiom is a single symbol by wrapping longer ones.

    Each axiom ``w`` with ``len(w) != 1`` is replaced by a fresh start symbol
    with the rule ``S_w -> w`` added to every table (to one new table if the
    system has none).
    """
    if all(len(w) == 1 for w in h.axioms):
        return h
    used = set(h.alphabet)
    wrap_rules: list[tuple[Symbol, Word]] = []
    axioms: list[Word] = []
    for w in h.axioms:
        if len(w) == 1:
            axioms.append(w)
            continue
        s = fresh_symbol("S@ax", used)
        used.add(s)
        wrap_rules.append((s, w))
        axioms.append((s,))
    if h.tables:
        tables = tuple(
            Table(t.name, tuple(sorted(set(t.rules) | set(wrap_rules)))) for t in h.tables
        )
    else:
        tables = (Table("ax", tuple(sorted(wrap_rules))),)
    return lsystem(used, h.terminals, tables, axioms, h.kind)


def disjoint_rename(
    h: LSystem, reserved: Iterable[Symbol]
) -> tuple[LSystem, Homomorphism]:
    """Rename the nonterminals of ``h`` off ``reserved``; terminals stay fixed.

    Returns the renamed system and the (length-preserving) renaming map on
    the old alphabet.  Raises TerminalClash when a reserved symbol is a
    terminal of ``h``, since terminals cannot be moved.
    """
    res = frozenset(reserved)
    clash = res & h.terminals
    if clash:
        raise TerminalClash(f"reserved symbols are terminals of the system: {sorted(clash)}")
    mapping: dict[Symbol, Symbol] = {}
    used = set(h.alphabet) | set(res)
    for c in sorted(h.nonterminals & res):
        fresh = fresh_symbol(c, used)
        used.add(fresh)
        mapping[c] = fresh
    if not mapping:
        return h, identity_hom(h.alphabet)

    def m(c: Symbol) -> Symbol:
        return mapping.get(c, c)

    def mw(w: Word) -> Word:
        return tuple(m(c) for c in w)

    tables = tuple(
        Table(t.name, tuple(sorted((m(lhs), mw(rhs)) for lhs, rhs in t.rules)))
        for t in h.tables
    )
    renamed = lsystem(
        {m(c) for c in h.alphabet}, h.terminals, tables, [mw(w) for w in h.axioms], h.kind
    )
    return renamed, Homomorphism({c: (m(c),) for c in h.alphabet})


def union(h1: LSystem, h2: LSystem) -> LSystem:
    """Language union: rename nonterminals apart, pool tables and axioms.

    Each table acts as the identity on the other system's symbols via the
    implicit-identity convention, so determinism is preserved.
    """
    terms = h1.terminals | h2.terminals
    h1r, _ = disjoint_rename(h1, (h2.alphabet | terms) - h1.terminals)
    h2r, _ = disjoint_rename(h2, (h1r.alphabet | terms) - h2.terminals)
    names: set[str] = set()
    tables: list[Table] = []
    for t in h1r.tables + h2r.tables:
        name = fresh_symbol(t.name or "t", names)
        names.add(name)
        tables.append(Table(name, t.rules))
    kind = "EDT0L" if h1.kind == h2.kind == "EDT0L" else "ET0L"
    return lsystem(
        h1r.alphabet | h2r.alphabet | terms,
        terms,
        tables,
        h1r.axioms + h2r.axioms,
        kind,
    )


def hom_image(h: LSystem, hom: Homomorphism) -> LSystem:
    """Apply a terminal homomorphism at the language level.

    Every terminal is frozen into a fresh barred copy throughout the system;
    one finishing table maps each barred copy to its image.  Image symbols
    are inert, so the image of each position is taken exactly once.
    """
    for c in h.terminals:
        if c not in hom.images:
            raise UnknownSymbol(f"homomorphism not defined on terminal {c!r}")
    targets = frozenset(s for c in h.terminals for s in hom.images[c])
    clash = targets & h.nonterminals
    if clash:
        h, _ = disjoint_rename(h, clash)
    used = set(h.alphabet) | set(targets)
    bar: dict[Symbol, Symbol] = {}
    for c in sorted(h.terminals):
        bar[c] = fresh_symbol(f"{c}@bar", used)
        used.add(bar[c])

    def bw(w: Word) -> Word:
        return tuple(bar.get(c, c) for c in w)

    tables = [
        Table(t.name, tuple(sorted((bar.get(lhs, lhs), bw(rhs)) for lhs, rhs in t.rules)))
        for t in h.tables
    ]
    tables.append(
        Table("image", tuple(sorted((bar[c], tuple(hom.images[c])) for c in h.terminals)))
    )
    alphabet = h.nonterminals | frozenset(bar.values()) | targets
    return lsystem(alphabet, targets, tables, [bw(w) for w in h.axioms], h.kind)


# ---------------------------------------------------------------------------
# Regular intersection


def _effects(h: LSystem, d: Dfa) -> dict[Symbol, dict[str, frozenset[str]]]:
    """Over-approximate, per symbol, the DFA state pairs its derivable words realize.

    Terminals contribute their own transition; every rule contributes the
    composition of its right side's effects.  Ignoring table synchronization
    only ever adds pairs, which keeps the pruning that uses this sound.
    """
    eff: dict[Symbol, dict[str, set[str]]] = {c: {} for c in h.alphabet}
    for c in h.terminals:
        for q in d.states:
            eff[c].setdefault(q, set()).add(d.delta[(q, c)])
    rules = sorted({(lhs, rhs) for t in h.tables for lhs, rhs in t.rules})
    changed = True
    while changed:
        changed = False
        for lhs, rhs in rules:
            acc: dict[str, set[str]] = {q: {q} for q in d.states}
            ok = True
            for c in rhs:
                e = eff.get(c)
                if e is None:
                    ok = False
                    break
                nxt: dict[str, set[str]] = {}
                for q, mids in acc.items():
                    outs: set[str] = set()
                    for r in mids:
                        outs |= e.get(r, set())
                    if outs:
                        nxt[q] = outs
                acc = nxt
                if not acc:
                    ok = False
                    break
            if not ok:
                continue
            tgt = eff[lhs]
            for q, outs in acc.items():
                cur = tgt.setdefault(q, set())
                if not outs <= cur:
                    cur |= outs
                    changed = True
    return {c: {q: frozenset(v) for q, v in m.items() if v} for c, m in eff.items()}


def _decompositions(
    rhs: Word,
    q_start: str,
    q_end: str,
    eff: dict[Symbol, dict[str, frozenset[str]]],
) -> list[tuple[str, ...]]:
    """State sequences q_start = r0, ..., rn = q_end threading ``rhs`` through the effects."""
    n = len(rhs)
    if n == 0:
        return [(q_start,)] if q_start == q_end else []
    feasible: list[set[str]] = [set() for _ in range(n + 1)]
    feasible[n] = {q_end}
    for j in range(n - 1, -1, -1):
        e = eff.get(rhs[j], {})
        feasible[j] = {q for q, outs in e.items() if outs & feasible[j + 1]}
    if q_start not in feasible[0]:
        return []
    seqs: list[tuple[str, ...]] = []
    stack: list[tuple[int, tuple[str, ...]]] = [(0, (q_start,))]
    while stack:
        j, seq = stack.pop()
        if j == n:
            seqs.append(seq)
            continue
        e = eff.get(rhs[j], {})
        for r in sorted(e.get(seq[-1], ()) & feasible[j + 1]):
            stack.append((j + 1, seq + (r,)))
    return sorted(seqs)


def intersect_regular(
    h: LSystem, d: Dfa, table_limit: int = DEFAULT_TABLE_LIMIT
) -> LSystem:
    """Intersect the generated language with the DFA's language.

    Triple construction: a copy ``(q, c, q')`` of each symbol promises that
    this occurrence derives a terminal word driving the DFA from q to q'.
    Only effect-realizable triples are materialized.  For EDT0L systems each
    way of assigning one state decomposition per annotated symbol yields a
    separate table, subject to ``table_limit``.
    """
    dc = complete_over(d, h.terminals)
    eff = _effects(h, dc)
    bot = poison_symbol(h)
    states = sorted(dc.states)

    used = set(h.terminals) | {bot}
    name: dict[tuple[str, Symbol, str], Symbol] = {}
    for c in sorted(h.alphabet):
        for q in states:
            for q2 in sorted(eff.get(c, {}).get(q, ())):
                n = fresh_symbol(f"{q}.{c}.{q2}", used)
                used.add(n)
                name[(q, c, q2)] = n

    def annotate_rule(lhs: Symbol, rhs: Word, q: str, q2: str) -> list[tuple[Symbol, Word]]:
        trip = name[(q, lhs, q2)]
        out = []
        for seq in _decompositions(rhs, q, q2, eff):
            new_rhs = tuple(name[(seq[j], rhs[j], seq[j + 1])] for j in range(len(rhs)))
            out.append((trip, new_rhs))
        return out

    def lhs_pairs(c: Symbol) -> list[tuple[str, str]]:
        return sorted((q, q2) for q, outs in eff.get(c, {}).items() for q2 in outs)

    tables: list[Table] = []
    if h.kind == "ET0L":
        for t in h.tables:
            rules: list[tuple[Symbol, Word]] = []
            for c in sorted(t.lhs_symbols):
                for q, q2 in lhs_pairs(c):
                    variants: list[tuple[Symbol, Word]] = []
                    for rhs in t.by_lhs[c]:
                        variants.extend(annotate_rule(c, rhs, q, q2))
                    rules.extend(variants if variants else [(name[(q, c, q2)], (bot,))])
            for c in sorted(t.lhs_symbols & h.terminals):
                rules.append((c, (bot,)))  # extracted too early: the context still owes steps
            tables.append(Table(f"{t.name}.x", tuple(sorted(set(rules)))))
    else:
        total = 0
        for t in h.tables:
            fixed: list[tuple[Symbol, Word]] = []
            choices: list[list[tuple[Symbol, Word]]] = []
            for c in sorted(t.lhs_symbols):
                (rhs,) = t.by_lhs[c]
                for q, q2 in lhs_pairs(c):
                    variants = annotate_rule(c, rhs, q, q2)
                    if not variants:
                        fixed.append((name[(q, c, q2)], (bot,)))
                    elif len(variants) == 1:
                        fixed.extend(variants)
                    else:
                        choices.append(variants)
            count = 1
            for ch in choices:
                count *= len(ch)
            total += count
            if total > table_limit:
                raise TooLarge(
                    f"EDT0L intersection needs more than {table_limit} tables "
                    f"({total}+ so far); raise table_limit to force the build"
                )
            for c in sorted(t.lhs_symbols & h.terminals):
                fixed.append((c, (bot,)))
            for idx, pick in enumerate(product(*choices)):
                rules = tuple(sorted(set(fixed) | set(pick)))
                tables.append(Table(f"{t.name}.x{idx}", rules))

    extract = [
        (name[(q, c, dc.delta[(q, c)])], (c,))
        for c in sorted(h.terminals)
        for q in states
        if (q, c, dc.delta[(q, c)]) in name
    ]
    tables.append(Table("extract", tuple(sorted(extract))))

    axioms: list[Word] = []
    for w in h.axioms:
        for q_end in sorted(dc.accepting):
            for seq in _decompositions(w, dc.start, q_end, eff):
                axioms.append(tuple(name[(seq[j], w[j], seq[j + 1])] for j in range(len(w))))

    alphabet = frozenset(name.values()) | h.terminals | {bot}
    return lsystem(alphabet, h.terminals, tables, axioms, h.kind)


# ---------------------------------------------------------------------------
# Marker insertion


def insert_one_hash(h: LSystem, mark: Symbol) -> LSystem:
    """Build a system for {u mark v : uv in L(h)}.

    A subscripted copy of each symbol carries the pending marker through the
    derivation; dedicated tables move the marker into a chosen position of
    the applied rule or drop it (fused with a rewriting step, or standalone
    next to the carrying symbol).  Exactly one marked symbol exists until the
    marker is placed, and none afterwards.
    """
    check_symbol(mark)
    if mark in h.alphabet:
        raise HashInAlphabet(f"hash symbol {mark!r} already in the alphabet")
    h = wrap_axioms(h)
    bot = poison_symbol(h)
    used = set(h.alphabet) | {mark, bot}
    sub: dict[Symbol, Symbol] = {}
    for c in sorted(h.alphabet):
        sub[c] = fresh_symbol(f"{c}@H", used)
        used.add(sub[c])

    def carry_variants(c: Symbol, j: Optional[int], t: Table) -> list[tuple[Symbol, Word]]:
        """Marked rules sub[c] -> u sub[d] v for rules c -> udv of ``t`` (|u| = j, or any j)."""
        out = []
        for rhs in t.by_lhs.get(c, ()):
            positions = range(len(rhs)) if j is None else ([j] if j < len(rhs) else [])
            for i in positions:
                out.append((sub[c], rhs[:i] + (sub[rhs[i]],) + rhs[i + 1 :]))
        return out

    def drop_variants(c: Symbol, j: Optional[int], t: Table) -> list[tuple[Symbol, Word]]:
        """Marked rules sub[c] -> u mark v for rules c -> uv of ``t`` (|u| = j, or any j)."""
        out = []
        for rhs in t.by_lhs.get(c, ()):
            positions = range(len(rhs) + 1) if j is None else ([j] if j <= len(rhs) else [])
            for i in positions:
                out.append((sub[c], rhs[:i] + (mark,) + rhs[i:]))
        return out

    def with_guard(
        t: Table, marked: list[tuple[Symbol, Word]], covered: Iterable[Symbol]
    ) -> tuple[tuple[Symbol, Word], ...]:
        """Table rules + marked rules, poisoning marked copies that cannot act."""
        have = {lhs for lhs, _ in marked}
        poison = [(sub[c], (bot,)) for c in sorted(covered) if sub[c] not in have]
        return tuple(sorted(set(t.rules) | set(marked) | set(poison)))

    tables: list[Table] = []
    for t in h.tables:
        # The unmarked original: a marked symbol stalling here while its
        # context advances would desynchronize the simulation, so it dies.
        tables.append(
            Table(t.name, tuple(sorted(set(t.rules) | {(sub[c], (bot,)) for c in t.lhs_symbols})))
        )
        if h.kind == "ET0L":
            carry = [v for c in sorted(t.lhs_symbols) for v in carry_variants(c, None, t)]
            drop = [v for c in sorted(t.lhs_symbols) for v in drop_variants(c, None, t)]
            tables.append(Table(f"{t.name}.m", with_guard(t, carry, t.lhs_symbols)))
            tables.append(Table(f"{t.name}.h", with_guard(t, drop, t.lhs_symbols)))
        else:
            top = max((len(rhs) for _, rhs in t.rules), default=0)
            for j in range(top):
                carry = [v for c in sorted(t.lhs_symbols) for v in carry_variants(c, j, t)]
                tables.append(Table(f"{t.name}.m{j}", with_guard(t, carry, t.lhs_symbols)))
            for j in range(top + 1):
                drop = [v for c in sorted(t.lhs_symbols) for v in drop_variants(c, j, t)]
                tables.append(Table(f"{t.name}.h{j}", with_guard(t, drop, t.lhs_symbols)))
    # Standalone placement: drop the marker next to the carrying symbol while
    # the rest of the form waits.  This needs no matching rewriting step and
    # covers insertion positions adjacent to the carrier's final material.
    tables.append(Table("place.l", tuple(sorted((sub[c], (mark, c)) for c in sorted(h.alphabet)))))
    tables.append(Table("place.r", tuple(sorted((sub[c], (c, mark)) for c in sorted(h.alphabet)))))

    axioms = [(sub[w[0]],) for w in h.axioms]
    alphabet = h.alphabet | frozenset(sub.values()) | {mark, bot}
    return lsystem(alphabet, h.terminals | {mark}, tables, axioms, h.kind)


def insert_hashes(
    h: LSystem, hashes: Sequence[Symbol], table_limit: int = DEFAULT_TABLE_LIMIT
) -> LSystem:
    """Build a system for {h0 u1 h1 ... uk hk : u1...uk in L(h)}.

    Inserts one marker at a time; after each insertion the system is
    intersected with the (partial) marker-ordering language, which prunes
    misordered placements as soon as they become impossible to repair and
    keeps the iterated construction small.  The final intersection is with
    the full ordering language.
    """
    if len(set(hashes)) != len(hashes):
        raise GrammarError("hash symbols must be pairwise distinct")
    for mark in hashes:
        if mark in h.alphabet:
            raise HashInAlphabet(f"hash symbol {mark!r} already in the alphabet")
    base_terms = h.terminals
    cur = h
    for i, mark in enumerate(hashes):
        cur = insert_one_hash(cur, mark)
        placed = hashes[: i + 1]
        if i + 1 == len(hashes):
            d = hash_order_dfa(placed, base_terms)
        else:
            d = hash_prefix_dfa(placed, base_terms)
        cur = simplify(intersect_regular(cur, d, table_limit))
    return cur


# ---------------------------------------------------------------------------
# (a,b)-annotation


@dataclass(frozen=True)
class AbMorphism:
    """A morphism onto {a,b}* fixing the marks, erasing other terminals.

    Rule preservation (the image of a left side equals the image of its right
    side) is checkable statically; rules that step into the poison symbol are
    exempt, being unable to contribute words.
    """

    images: Mapping[Symbol, Word]
    marks: tuple[Symbol, Symbol]

    def __call__(self, w: Word) -> Word:
        return tuple(s for c in w for s in self.images[c])

    def rule_violations(self, h: LSystem) -> list[tuple[str, Symbol, Word]]:
        out = []
        for t in h.tables:
            for lhs, rhs in t.rules:
                if any(self.images.get(c) is None for c in (lhs, *rhs)):
                    out.append((t.name, lhs, rhs))
                    continue
                if any(_is_poison(c) for c in rhs):
                    continue
                if self(rhs) != self.images[lhs]:
                    out.append((t.name, lhs, rhs))
        return out


def _is_poison(c: Symbol) -> bool:
    return c == POISON or c.startswith(POISON + "_")


@dataclass(frozen=True)
class AnnotatedSystem:
    system: LSystem
    phi: AbMorphism


def _check_ab_language(h: LSystem, a: Symbol, b: Symbol, caps: EnumerationCaps) -> None:
    for w in enumerate_words(h, caps).words:
        if w.count(a) != 1 or w.count(b) != 1 or w.index(a) > w.index(b):
            raise NotAbLanguage(f"enumerated word {w} is not an ({a},{b})-word")


def annotate_ab(
    h: LSystem,
    a: Symbol,
    b: Symbol,
    check_caps: Optional[EnumerationCaps] = None,
    table_limit: int = DEFAULT_TABLE_LIMIT,
) -> AnnotatedSystem:
    """Re-generate the language by a system carrying the marks' positions.

    Every symbol is paired with the factor of ``ab`` its occurrence will
    contribute; tables distribute the factor across each rule's right side,
    and a finishing table strips the annotation off terminals.  The returned
    morphism reads the annotation and is invariant along every step.
    """
    if a == b:
        raise GrammarError("marks must be distinct")
    for mark in (a, b):
        if mark not in h.terminals:
            raise GrammarError(f"mark {mark!r} is not a terminal")
    if check_caps is not None:
        _check_ab_language(h, a, b, check_caps)
    h = wrap_axioms(h)
    bot = poison_symbol(h)
    factors: tuple[Word, ...] = (EPSILON, (a,), (b,), (a, b))
    labels = {EPSILON: "e", (a,): "a", (b,): "b", (a, b): "ab"}

    def mark_image(c: Symbol) -> Word:
        return (c,) if c in (a, b) else EPSILON

    def factorizations(f: Word, m: int) -> list[tuple[Word, ...]]:
        if f == EPSILON:
            return [(EPSILON,) * m]
        if len(f) == 1:
            return [
                (EPSILON,) * i + (f,) + (EPSILON,) * (m - i - 1) for i in range(m)
            ]
        out = [
            (EPSILON,) * i + ((a, b),) + (EPSILON,) * (m - i - 1) for i in range(m)
        ]
        for i in range(m):
            for j in range(i + 1, m):
                row = [EPSILON] * m
                row[i], row[j] = (a,), (b,)
                out.append(tuple(row))
        return out

    # Reachable (symbol, factor) pairs from the ab-annotated axioms.
    rules_of: dict[Symbol, list[Word]] = {}
    for t in h.tables:
        for lhs, rhs in t.rules:
            rules_of.setdefault(lhs, []).append(rhs)
    reachable: set[tuple[Symbol, Word]] = set()
    work = [(w[0], (a, b)) for w in h.axioms]
    while work:
        pair = work.pop()
        if pair in reachable:
            continue
        reachable.add(pair)
        c, f = pair
        for rhs in rules_of.get(c, ()):
            for split in factorizations(f, len(rhs)):
                for d, fd in zip(rhs, split):
                    if (d, fd) not in reachable:
                        work.append((d, fd))
    used = set(h.terminals) | {bot}
    name: dict[tuple[Symbol, Word], Symbol] = {}
    for c, f in sorted(reachable, key=lambda p: (p[0], len(p[1]), p[1])):
        n = fresh_symbol(f"{c}|{labels[f]}", used)
        used.add(n)
        name[(c, f)] = n

    def distributed(c: Symbol, f: Word, rhs: Word, split: tuple[Word, ...]) -> tuple[Symbol, Word]:
        return name[(c, f)], tuple(name[(d, fd)] for d, fd in zip(rhs, split))

    terminal_guards = {
        t.name: tuple(sorted((c, (bot,)) for c in t.lhs_symbols & h.terminals))
        for t in h.tables
    }

    tables: list[Table] = []
    if h.kind == "ET0L":
        for t in h.tables:
            rules: set[tuple[Symbol, Word]] = set(terminal_guards[t.name])
            for c in sorted(t.lhs_symbols):
                for f in factors:
                    if (c, f) not in name:
                        continue
                    variants = [
                        distributed(c, f, rhs, split)
                        for rhs in t.by_lhs[c]
                        for split in factorizations(f, len(rhs))
                    ]
                    rules.update(variants if variants else [(name[(c, f)], (bot,))])
            tables.append(Table(f"{t.name}.ab", tuple(sorted(rules))))
    else:
        total = 0
        seen: set[tuple[tuple[Symbol, Word], ...]] = set()
        for t in h.tables:
            top = max((len(rhs) for _, rhs in t.rules), default=0)
            for ja in range(1, max(top, 1) + 1):
                for jb in range(ja, max(top, 1) + 1):
                    rules = set(terminal_guards[t.name])
                    for c in sorted(t.lhs_symbols):
                        (rhs,) = t.by_lhs[c]
                        m = len(rhs)
                        for f in factors:
                            if (c, f) not in name:
                                continue
                            split: Optional[tuple[Word, ...]] = None
                            if f == EPSILON:
                                split = (EPSILON,) * m
                            elif f == (a,) and ja <= m:
                                split = tuple(
                                    (a,) if i == ja - 1 else EPSILON for i in range(m)
                                )
                            elif f == (b,) and jb <= m:
                                split = tuple(
                                    (b,) if i == jb - 1 else EPSILON for i in range(m)
                                )
                            elif f == (a, b) and jb <= m:
                                row = [EPSILON] * m
                                if ja == jb:
                                    row[ja - 1] = (a, b)
                                else:
                                    row[ja - 1], row[jb - 1] = (a,), (b,)
                                split = tuple(row)
                            if split is None:
                                rules.add((name[(c, f)], (bot,)))
                            else:
                                rules.add(distributed(c, f, rhs, split))
                    canon = tuple(sorted(rules))
                    if canon in seen:
                        continue
                    seen.add(canon)
                    total += 1
                    if total > table_limit:
                        raise TooLarge(
                            f"EDT0L annotation needs more than {table_limit} tables"
                        )
                    tables.append(Table(f"{t.name}.f{ja}.{jb}", canon))

    convert = [
        (name[(c, mark_image(c))], (c,))
        for c in sorted(h.terminals)
        if (c, mark_image(c)) in name
    ]
    tables.append(Table("convert", tuple(sorted(convert))))

    axioms = [(name[(w[0], (a, b))],) for w in h.axioms]
    alphabet = frozenset(name.values()) | h.terminals | {bot}
    out = lsystem(alphabet, h.terminals, tables, axioms, h.kind)
    images: dict[Symbol, Word] = {bot: EPSILON}
    for (c, f), n in name.items():
        images[n] = f
    for c in h.terminals:
        images[c] = mark_image(c)
    out = simplify(out)
    phi = AbMorphism({c: images[c] for c in out.alphabet}, (a, b))
    return AnnotatedSystem(out, phi)


# ---------------------------------------------------------------------------
# The marked factor move


def _phi_positions(phi: AbMorphism, w: Word) -> list[int]:
    return [i for i, c in enumerate(w) if phi.images[c] != EPSILON]


def _pi_tilde(phi: AbMorphism, w: Word, p_wait: Symbol, p_done: Symbol, q_mark: Symbol) -> Word:
    """The marked move of a fused or split form: append pq, or move the middle between them."""
    pos = _phi_positions(phi, w)
    if len(pos) == 1 and phi.images[w[pos[0]]] == phi.marks:
        return w + (p_wait, q_mark)
    if len(pos) == 2:
        i, j = pos
        if phi.images[w[i]] == (phi.marks[0],) and phi.images[w[j]] == (phi.marks[1],):
            return w[: i + 1] + w[j:] + (p_done,) + w[i + 1 : j] + (q_mark,)
    raise NotAbLanguage(f"form {w} carries images that are not a factorization of ab")


def _carrier_shape(phi: AbMorphism, rhs: Word) -> Optional[tuple[int, Optional[int]]]:
    """Positions of the a- and b-carrier in a rule right side, if it has them."""
    pos = _phi_positions(phi, rhs)
    a, b = phi.marks
    if len(pos) == 1 and phi.images[rhs[pos[0]]] == (a, b):
        return pos[0], None
    if (
        len(pos) == 2
        and phi.images[rhs[pos[0]]] == (a,)
        and phi.images[rhs[pos[1]]] == (b,)
    ):
        return pos[0], pos[1]
    return None


def move_right_annotated(
    ann: AnnotatedSystem, table_limit: int = DEFAULT_TABLE_LIMIT
) -> tuple[LSystem, AbMorphism]:
    """Core of the factor move: the phase-guarded marked system, before erasing p and q.

    Fused-phase tables mimic steps that keep the two marks on one symbol;
    one table per occurring middle factor performs the split, inserting that
    factor after the phase symbol; split-phase tables are indexed by the
    words the two carriers emit toward the moved zone.  Phase symbols are
    totalized in every table so an out-of-phase application dies.
    """
    s, phi = ann.system, ann.phi
    a, b = phi.marks
    used = set(s.alphabet)
    p_wait = fresh_symbol("p!w", used)
    used.add(p_wait)
    p_done = fresh_symbol("p!d", used)
    used.add(p_done)
    q_mark = fresh_symbol("q!", used)
    used.add(q_mark)
    p_term = fresh_symbol("p", used)
    used.add(p_term)
    q_term = fresh_symbol("q", used)
    used.add(q_term)
    bot = poison_symbol(s)
    used.add(bot)

    img = dict(phi.images)
    for c in (p_wait, p_done, q_mark, p_term, q_term, bot):
        img.setdefault(c, EPSILON)

    def image(c: Symbol) -> Word:
        return img[c]

    eps_syms = sorted(c for c in s.alphabet if image(c) == EPSILON and c != bot)
    fused_syms = sorted(c for c in s.alphabet if image(c) == (a, b))
    a_syms = sorted(c for c in s.alphabet if image(c) == (a,))
    b_syms = sorted(c for c in s.alphabet if image(c) == (b,))

    tables: list[Table] = []
    seen: set[tuple[tuple[Symbol, Word], ...]] = set()
    count = 0

    def emit(name: str, rules: Iterable[tuple[Symbol, Word]]) -> None:
        nonlocal count
        canon = tuple(sorted(set(rules)))
        if canon in seen:
            return
        seen.add(canon)
        count += 1
        if count > table_limit:
            raise TooLarge(f"factor move needs more than {table_limit} tables")
        tables.append(Table(name, canon))

    for t in s.tables:
        eps_rules = [
            (lhs, rhs) for lhs, rhs in t.rules if image(lhs) == EPSILON
        ]
        base_guard = [(p_term, (bot,)), (q_term, (bot,))]

        # Fused phase: the two marks stay on a single symbol.
        fused_rules: list[tuple[Symbol, Word]] = []
        for c in fused_syms:
            if c not in t.lhs_symbols:
                continue  # implicit identity is a legal fused step
            kept = [
                (c, rhs)
                for rhs in t.by_lhs[c]
                if (sh := _carrier_shape(phi, rhs)) is not None and sh[1] is None
            ]
            fused_rules.extend(kept if kept else [(c, (bot,))])
        emit(
            f"{t.name}.fus",
            eps_rules + fused_rules + base_guard + [(p_wait, (p_wait,)), (p_done, (bot,))],
        )

        # The split moment: one table per middle factor that occurs in a rule.
        middles: dict[Word, list[tuple[Symbol, Word]]] = {}
        for c in fused_syms:
            for rhs in t.by_lhs.get(c, ()):
                shape = _carrier_shape(phi, rhs)
                if shape is None or shape[1] is None:
                    continue
                i, j = shape
                middles.setdefault(rhs[i + 1 : j], []).append((c, rhs[: i + 1] + rhs[j:]))
        for idx, (mid, split_rules) in enumerate(sorted(middles.items())):
            have = {lhs for lhs, _ in split_rules}
            poison = [(c, (bot,)) for c in fused_syms if c not in have]
            emit(
                f"{t.name}.sw{idx}",
                eps_rules
                + split_rules
                + poison
                + base_guard
                + [(p_wait, (p_done,) + mid), (p_done, (bot,))],
            )

        # Split phase: carriers emit toward the moved zone; the phase symbols
        # replay those emissions next to it.
        a_parts: dict[Word, list[tuple[Symbol, Word]]] = {EPSILON: []}
        for c in a_syms:
            for rhs in t.by_lhs.get(c, ()):
                shape = _carrier_shape(phi, rhs)
                if shape is None or shape[1] is not None or image(rhs[shape[0]]) != (a,):
                    continue
                i = shape[0]
                a_parts.setdefault(rhs[i + 1 :], []).append((c, rhs[: i + 1]))
        b_parts: dict[Word, list[tuple[Symbol, Word]]] = {EPSILON: []}
        for c in b_syms:
            for rhs in t.by_lhs.get(c, ()):
                shape = _carrier_shape(phi, rhs)
                if shape is None or shape[1] is not None or image(rhs[shape[0]]) != (b,):
                    continue
                i = shape[0]
                b_parts.setdefault(rhs[:i], []).append((c, rhs[i:]))
        for u in sorted(a_parts):
            for v in sorted(b_parts):
                rules = list(eps_rules) + base_guard
                have_a = {lhs for lhs, _ in a_parts[u]}
                rules.extend(a_parts[u])
                for c in a_syms:
                    if c in have_a:
                        continue
                    if c in t.lhs_symbols or u != EPSILON:
                        rules.append((c, (bot,)))
                have_b = {lhs for lhs, _ in b_parts[v]}
                rules.extend(b_parts[v])
                for c in b_syms:
                    if c in have_b:
                        continue
                    if c in t.lhs_symbols or v != EPSILON:
                        rules.append((c, (bot,)))
                rules.extend(
                    [
                        (p_done, (p_done,) + u),
                        (q_mark, v + (q_mark,)),
                        (p_wait, (bot,)),
                    ]
                )
                emit(f"{t.name}.s{len(u)}.{len(v)}", rules)

    emit("finish", [(p_done, (p_term,)), (q_mark, (q_term,)), (p_wait, (bot,))])

    axioms = [_pi_tilde(phi, w, p_wait, p_done, q_mark) for w in s.axioms]
    alphabet = s.alphabet | {p_wait, p_done, q_mark, p_term, q_term, bot}
    moved = lsystem(alphabet, s.terminals | {p_term, q_term}, tables, axioms, s.kind)
    return moved, AbMorphism({c: img[c] for c in moved.alphabet}, (a, b))


def move_right(
    h: LSystem,
    a: Symbol,
    b: Symbol,
    check_caps: Optional[EnumerationCaps] = None,
    table_limit: int = DEFAULT_TABLE_LIMIT,
) -> LSystem:
    """Map an (a,b)-language {x a y b z} to {x a b z y}.

    Pipeline: annotate with the mark positions, build the phase-guarded
    marked-move system, then erase the two auxiliary end markers.
    """
    ann = annotate_ab(h, a, b, check_caps=check_caps, table_limit=table_limit)
    moved, _ = move_right_annotated(ann, table_limit=table_limit)
    # The auxiliary end markers are exactly the non-original terminals.
    erase = Homomorphism(
        {c: (c,) if c in h.terminals else EPSILON for c in moved.terminals}
    )
    return simplify(hom_image(moved, erase))


# ---------------------------------------------------------------------------
# Factor permutations


def ck(h: LSystem, k: int, table_limit: int = DEFAULT_TABLE_LIMIT) -> LSystem:
    """Close the language under permutations of k (possibly empty) factors.

    Inserts k+1 ordered markers, then for every permutation sigma moves the
    factor between markers sigma(i)-1 and sigma(i) to the end, i = 1..k, and
    finally erases the markers and takes the union over all sigma.
    """
    if k < 1:
        raise GrammarError(f"k must be >= 1, got {k}")
    used = set(h.alphabet)
    hashes: list[Symbol] = []
    for i in range(k + 1):
        mark = fresh_symbol(f"#{i}", used)
        used.add(mark)
        hashes.append(mark)
    base = insert_hashes(h, hashes, table_limit)
    branches: list[LSystem] = []
    for sigma in permutations(range(1, k + 1)):
        cur = base
        for s in sigma:
            cur = move_right(cur, hashes[s - 1], hashes[s], table_limit=table_limit)
        erase = Homomorphism(
            {c: EPSILON if c in hashes else (c,) for c in cur.terminals}
        )
        branches.append(simplify(hom_image(cur, erase)))
    return simplify(reduce(union, branches))


def cyc_etol(h: LSystem, table_limit: int = DEFAULT_TABLE_LIMIT) -> LSystem:
    """Cyclic closure: permutations of two factors."""
    return ck(h, 2, table_limit)
