"""Minimal complete-DFA support for regular intersection.

Only what the constructions need: acceptance runs, completion over a larger
alphabet, and the hash-ordering language ``#0 A* #1 A* ... A* #n`` used to
force inserted markers into index order.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Mapping, Sequence

from .core import GrammarError, Symbol, UnknownSymbol, Word


class OverlappingAlphabets(GrammarError):
    pass


class IncompleteDfa(GrammarError):
    pass


@dataclass(frozen=True)
class Dfa:
    states: frozenset[str]
    alphabet: frozenset[Symbol]
    start: str
    accepting: frozenset[str]
    delta: Mapping[tuple[str, Symbol], str]

    @cached_property
    def complete(self) -> bool:
        return all((q, c) in self.delta for q in self.states for c in self.alphabet)


def dfa(
    states: Iterable[str],
    alphabet: Iterable[Symbol],
    start: str,
    accepting: Iterable[str],
    delta: Mapping[tuple[str, Symbol], str],
) -> Dfa:
    d = Dfa(frozenset(states), frozenset(alphabet), start, frozenset(accepting), dict(delta))
    if d.start not in d.states:
        raise GrammarError(f"start state {start!r} not a state")
    if not d.accepting <= d.states:
        raise GrammarError("accepting states not a subset of states")
    for (q, c), q2 in d.delta.items():
        if q not in d.states or q2 not in d.states:
            raise GrammarError(f"transition ({q!r}, {c!r}) -> {q2!r} uses unknown state")
        if c not in d.alphabet:
            raise GrammarError(f"transition on {c!r} outside the alphabet")
    return d


def dfa_accepts(d: Dfa, w: Word) -> bool:
    """Standard run acceptance; the run must be defined on every symbol of ``w``."""
    q = d.start
    for c in w:
        if c not in d.alphabet:
            raise UnknownSymbol(f"symbol {c!r} not in DFA alphabet")
        nxt = d.delta.get((q, c))
        if nxt is None:
            raise IncompleteDfa(f"no transition from {q!r} on {c!r}")
        q = nxt
    return q in d.accepting


def complete_over(d: Dfa, alphabet: Iterable[Symbol], sink: str = "_sink") -> Dfa:
    """Extend ``d`` to a complete DFA over ``alphabet`` (missing symbols go to a sink).

    Raises IncompleteDfa if ``d`` is partial over its own declared alphabet.
    """
    if not d.complete:
        raise IncompleteDfa("DFA is not complete over its declared alphabet")
    full = frozenset(alphabet) | d.alphabet
    if full == d.alphabet:
        return d
    sink_state = sink
    k = 0
    while sink_state in d.states:
        k += 1
        sink_state = f"{sink}{k}"
    states = d.states | {sink_state}
    delta = dict(d.delta)
    for q in d.states:
        for c in full - d.alphabet:
            delta[(q, c)] = sink_state
    for c in full:
        delta[(sink_state, c)] = sink_state
    return Dfa(states, full, d.start, d.accepting, delta)


def hash_order_dfa(hashes: Sequence[Symbol], base: Iterable[Symbol]) -> Dfa:
    """Accepts exactly ``h0 u1 h1 u2 ... un hn`` with every ``u_i`` over ``base``.

    One state per count of hashes seen so far, plus a sink.
    """
    return _hash_chain_dfa(hashes, base, trailing_base=False)


def hash_prefix_dfa(hashes: Sequence[Symbol], base: Iterable[Symbol]) -> Dfa:
    """Like :func:`hash_order_dfa` but allowing base symbols after the last hash.

    Accepts ``h0 u1 h1 ... hn u`` with ``u`` over ``base``; used to filter
    partially inserted systems where later markers are still to come.
    """
    return _hash_chain_dfa(hashes, base, trailing_base=True)


def _hash_chain_dfa(hashes: Sequence[Symbol], base: Iterable[Symbol], trailing_base: bool) -> Dfa:
    base_set = frozenset(base)
    if not hashes:
        raise GrammarError("need at least one hash symbol")
    if len(set(hashes)) != len(hashes):
        raise GrammarError("hash symbols must be pairwise distinct")
    clash = base_set & set(hashes)
    if clash:
        raise OverlappingAlphabets(f"hash symbols also in base alphabet: {sorted(clash)}")
    n = len(hashes)
    states = [f"s{i}" for i in range(n + 1)]
    sink = "sink"
    alphabet = base_set | frozenset(hashes)
    delta: dict[tuple[str, Symbol], str] = {}
    for i, q in enumerate(states):
        for c in alphabet:
            if i < n and c == hashes[i]:
                delta[(q, c)] = states[i + 1]
            elif c in base_set and 1 <= i and (i < n or trailing_base):
                delta[(q, c)] = q
            else:
                delta[(q, c)] = sink
    for c in alphabet:
        delta[(sink, c)] = sink
    return Dfa(
        frozenset(states) | {sink},
        alphabet,
        states[0],
        frozenset({states[n]}),
        delta,
    )
