"""Pyramidal histogram of characters (PHOC) word descriptor.

Layout of the 604-bit vector: unigram occupancy over the 36-character
alphabet at pyramid levels 2, 3, 4 and 5 (14 regions x 36 = 504 bits),
followed by level-2 occupancy of the 50 most common English bigrams
(2 regions x 50 = 100 bits).

Region membership uses exact integer arithmetic: an item spanning
``[i/n, (i+k)/n)`` belongs to region ``[j/L, (j+1)/L)`` when the overlap is at
least half of the item's own interval.
"""

import string
from functools import lru_cache

import numpy as np

ALPHABET = string.ascii_lowercase + string.digits
UNIGRAM_LEVELS = (2, 3, 4, 5)
BIGRAM_LEVELS = (2,)
COMMON_BIGRAMS = (
    "th", "he", "in", "er", "an", "re", "es", "on", "st", "nt",
    "en", "at", "ed", "nd", "to", "or", "ea", "ti", "ar", "te",
    "ng", "al", "it", "as", "is", "ha", "et", "se", "ou", "of",
    "le", "sa", "ve", "ro", "ra", "ri", "hi", "ne", "me", "de",
    "co", "ta", "ec", "si", "ll", "so", "na", "li", "la", "el",
)  # fmt: skip

PHOC_DIM = len(ALPHABET) * sum(UNIGRAM_LEVELS) + len(COMMON_BIGRAMS) * sum(BIGRAM_LEVELS)

_CHAR_INDEX = {c: i for i, c in enumerate(ALPHABET)}
_BIGRAM_INDEX = {b: i for i, b in enumerate(COMMON_BIGRAMS)}


def clean_word(text: str) -> str:
    """Lowercase and keep only alphabet characters."""
    return "".join(c for c in text.lower() if c in _CHAR_INDEX)


def _occupied(pos: int, span: int, n: int, region: int, level: int) -> bool:
    # Item covers [pos*L, (pos+span)*L), region covers [region*n, (region+1)*n),
    # both in units of 1 / (n * L).
    lo = max(pos * level, region * n)
    hi = min((pos + span) * level, (region + 1) * n)
    return 2 * (hi - lo) >= span * level


@lru_cache(maxsize=65536)
def _phoc_cached(word: str) -> bytes:
    vec = np.zeros(PHOC_DIM, dtype=np.uint8)
    n = len(word)
    if n == 0:
        return vec.tobytes()

    offset = 0
    n_chars = len(ALPHABET)
    for level in UNIGRAM_LEVELS:
        for region in range(level):
            base = offset + region * n_chars
            for pos, char in enumerate(word):
                if _occupied(pos, 1, n, region, level):
                    vec[base + _CHAR_INDEX[char]] = 1
        offset += level * n_chars

    n_bigrams = len(COMMON_BIGRAMS)
    for level in BIGRAM_LEVELS:
        for region in range(level):
            base = offset + region * n_bigrams
            for pos in range(n - 1):
                idx = _BIGRAM_INDEX.get(word[pos : pos + 2])
                if idx is not None and _occupied(pos, 2, n, region, level):
                    vec[base + idx] = 1
        offset += level * n_bigrams

    return vec.tobytes()


def phoc_encode(text: str) -> np.ndarray:
    """Encode a word as its binary PHOC descriptor.

    Characters outside ``[a-z0-9]`` are ignored after lowercasing; empty or
    garbage text yields the zero vector.

    Returns:
        ``uint8`` array of shape ``(604,)`` with values in ``{0, 1}``.
    """
    return np.frombuffer(_phoc_cached(clean_word(text)), dtype=np.uint8).copy()
