"""Symbols, words, homomorphisms and Parikh vectors shared by every module.

Symbols are interned text tokens; a word is a tuple of symbols, with the
empty tuple standing for the empty word.  All compound symbols created by
the grammar constructions (hash markers, subscripted copies, pair symbols,
phase symbols, ...) live in the same flat namespace and are made unique
with :func:`fresh_symbol`.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping

Symbol = str
Word = tuple[Symbol, ...]

EPSILON: Word = ()

# Poison nonterminal: a dead symbol used to totalize tables so that an
# out-of-phase table application can never contribute a terminal word.
POISON: Symbol = "_BOT"

# Tokens that the grammar file formats claim for themselves.  A symbol may
# *contain* characters like "@" or "#" (the compound naming scheme relies on
# that), but it may not be one of these tokens outright, start with "@"
# (directive prefix), be a bare "#" (comment marker) or use the index
# brackets of the indexed-grammar format.
RESERVED_TOKENS = frozenset({"->", ";", "()", "#"})


class GrammarError(Exception):
    """Base class for errors raised by grammar values and transformations."""


class UnknownSymbol(GrammarError):
    """A word mentions a symbol outside the relevant domain."""


def check_symbol(name: Symbol) -> Symbol:
    """Validate a symbol token, returning it unchanged."""
    if not name:
        raise GrammarError("symbol must be a nonempty token")
    if any(ch.isspace() for ch in name):
        raise GrammarError(f"symbol {name!r} contains whitespace")
    if name in RESERVED_TOKENS:
        raise GrammarError(f"symbol {name!r} is a reserved file-format token")
    if name.startswith("@"):
        raise GrammarError(f"symbol {name!r} would parse as a file directive")
    if "[" in name or "]" in name:
        raise GrammarError(f"symbol {name!r} contains index brackets")
    return name


def word(text: str) -> Word:
    """Build a word from a whitespace-separated token string ('' -> epsilon)."""
    return tuple(text.split())


def fresh_symbol(base: Symbol, used: Iterable[Symbol]) -> Symbol:
    """Return ``base`` if unused, else the first ``base_k`` (k = 1, 2, ...) that is."""
    taken = used if isinstance(used, (set, frozenset)) else set(used)
    if base not in taken:
        return base
    k = 1
    while f"{base}_{k}" in taken:
        k += 1
    return f"{base}_{k}"


def parikh(w: Word) -> Counter:
    """Occurrence counts per symbol of ``w``."""
    return Counter(w)


@dataclass(frozen=True)
class Homomorphism:
    """A monoid homomorphism determined by per-symbol images.

    The domain is exactly ``images.keys()``; applying the map to a word with
    a symbol outside the domain raises :class:`UnknownSymbol`.
    """

    images: Mapping[Symbol, Word]

    @property
    def domain(self) -> frozenset[Symbol]:
        return frozenset(self.images)

    @property
    def target_symbols(self) -> frozenset[Symbol]:
        return frozenset(s for w in self.images.values() for s in w)

    def __call__(self, w: Word) -> Word:
        return hom_apply(self, w)


def hom_apply(h: Homomorphism, w: Word) -> Word:
    """Concatenate the images of the symbols of ``w``, in order."""
    out: list[Symbol] = []
    for c in w:
        img = h.images.get(c)
        if img is None:
            raise UnknownSymbol(f"symbol {c!r} not in homomorphism domain")
        out.extend(img)
    return tuple(out)


def identity_hom(symbols: Iterable[Symbol]) -> Homomorphism:
    return Homomorphism({c: (c,) for c in symbols})


def erasing_hom(symbols: Iterable[Symbol], erase: Iterable[Symbol]) -> Homomorphism:
    """Identity on ``symbols`` except that members of ``erase`` map to epsilon."""
    dead = set(erase)
    return Homomorphism({c: EPSILON if c in dead else (c,) for c in symbols})
