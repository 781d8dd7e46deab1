"""Word-level ground truth for the grammar constructions.

Everything here works on finite word sets by brute force: rotations,
k-factor permutations, marker insertion and the between-markers move.  The
difftest driver compares these against bounded enumerations of the
transformed systems.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations_with_replacement, permutations
from typing import Iterable, Optional, Sequence

from .core import GrammarError, Homomorphism, Symbol, Word, hom_apply

WordSet = frozenset[Word]


class NotAbWord(GrammarError):
    """A word was expected to contain each marker exactly once, in order."""


def canonical_order(ws: Iterable[Word]) -> list[Word]:
    """Length-then-lexicographic ordering used for all word-set output."""
    return sorted(ws, key=lambda w: (len(w), w))


def word_rotations(w: Word) -> WordSet:
    """All cyclic shifts of ``w`` (including ``w`` itself; epsilon yields {epsilon})."""
    if not w:
        return frozenset({w})
    return frozenset(w[i:] + w[:i] for i in range(len(w)))


def word_ck(w: Word, k: int) -> WordSet:
    """All words obtained by cutting ``w`` into k possibly-empty factors and permuting them."""
    if k < 1:
        raise GrammarError(f"k must be >= 1, got {k}")
    out: set[Word] = set()
    for cuts in combinations_with_replacement(range(len(w) + 1), k - 1):
        bounds = (0,) + cuts + (len(w),)
        factors = [w[bounds[i] : bounds[i + 1]] for i in range(k)]
        for sigma in permutations(factors):
            out.add(tuple(c for f in sigma for c in f))
    return frozenset(out)


def split_ab(w: Word, a: Symbol, b: Symbol) -> tuple[Word, Word, Word]:
    """Split an (a,b)-word as x a y b z; raises NotAbWord otherwise."""
    if w.count(a) != 1 or w.count(b) != 1:
        raise NotAbWord(f"word {w} does not contain {a!r} and {b!r} exactly once")
    i, j = w.index(a), w.index(b)
    if i > j:
        raise NotAbWord(f"marker {a!r} occurs after {b!r} in {w}")
    return w[:i], w[i + 1 : j], w[j + 1 :]


def word_pi(w: Word, a: Symbol, b: Symbol) -> Word:
    """Move the factor between the unique a and b to the end: x a y b z -> x a b z y."""
    x, y, z = split_ab(w, a, b)
    return x + (a, b) + z + y


def word_insert_hash(w: Word, mark: Symbol) -> WordSet:
    """All |w|+1 single insertions of ``mark`` into ``w``."""
    return frozenset(w[:i] + (mark,) + w[i:] for i in range(len(w) + 1))


def word_insert_hashes(w: Word, hashes: Sequence[Symbol]) -> WordSet:
    """All order-respecting placements ``h0 u1 h1 ... uk hk`` with u1...uk = w."""
    k = len(hashes) - 1
    if k < 0:
        raise GrammarError("need at least one hash symbol")
    if k == 0:
        return frozenset({(hashes[0],)}) if not w else frozenset()
    out: set[Word] = set()
    for cuts in combinations_with_replacement(range(len(w) + 1), k - 1):
        bounds = (0,) + cuts + (len(w),)
        parts: list[Symbol] = [hashes[0]]
        for i in range(k):
            parts.extend(w[bounds[i] : bounds[i + 1]])
            parts.append(hashes[i + 1])
        out.add(tuple(parts))
    return frozenset(out)


def set_rotations(ws: Iterable[Word]) -> WordSet:
    return frozenset(r for w in ws for r in word_rotations(w))


def set_ck(ws: Iterable[Word], k: int) -> WordSet:
    return frozenset(r for w in ws for r in word_ck(w, k))


def set_insert_hash(ws: Iterable[Word], mark: Symbol) -> WordSet:
    return frozenset(r for w in ws for r in word_insert_hash(w, mark))


def set_insert_hashes(ws: Iterable[Word], hashes: Sequence[Symbol]) -> WordSet:
    return frozenset(r for w in ws for r in word_insert_hashes(w, hashes))


def set_pi(ws: Iterable[Word], a: Symbol, b: Symbol) -> WordSet:
    return frozenset(word_pi(w, a, b) for w in ws)


def set_hom(ws: Iterable[Word], h: Homomorphism) -> WordSet:
    return frozenset(hom_apply(h, w) for w in ws)


def set_closure(ws: Iterable[Word], op: str, **params) -> WordSet:
    """Dispatch a named word-set operation (used by the difftest driver)."""
    if op == "rotations":
        return set_rotations(ws)
    if op == "ck":
        return set_ck(ws, params["k"])
    if op == "insert_hash":
        return set_insert_hash(ws, params["mark"])
    if op == "insert_hashes":
        return set_insert_hashes(ws, params["hashes"])
    if op == "pi":
        return set_pi(ws, params["a"], params["b"])
    if op == "hom":
        return set_hom(ws, params["h"])
    raise GrammarError(f"unknown word-set operation {op!r}")


@dataclass(frozen=True)
class DiffReport:
    only_in_left: WordSet
    only_in_right: WordSet
    equal: bool
    caps_used: Optional[tuple[int, ...]] = None
    stabilized: Optional[bool] = None


def diff(left: Iterable[Word], right: Iterable[Word], **meta) -> DiffReport:
    ls, rs = frozenset(left), frozenset(right)
    return DiffReport(ls - rs, rs - ls, ls == rs, **meta)
