"""Grammar-to-grammar closure constructions with oracle-backed difftesting.

Executable constructions for permutation closures of ET0L/EDT0L languages
(marker insertion, regular intersection, the marked factor move, C^k and the
cyclic closure) and for the cyclic closure of indexed languages, verified
against word-level brute-force oracles on bounded language fragments.
"""

__version__ = "0.1.0"
