"""Pluggable embedding providers for questions, OCR words and frames.

A provider turns text (or a frame feature) into a fixed-width vector. The
toy providers shipped here are trainable hash-bucketed tables; pretrained
vectors plug in through :class:`PretrainedWordVectors` or any subclass of
:class:`EmbeddingProvider`. The :class:`ProviderRegistry` checks declared
widths when a provider is registered.
"""

import hashlib
import logging
import re
from abc import ABC, abstractmethod
from collections.abc import Mapping
from enum import Enum
from typing import Optional

import numpy as np
import torch
from torch import nn

from .exceptions import EncodingError, ProviderWidthError

logger = logging.getLogger(__name__)

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Lowercase and split on whitespace and punctuation."""
    return _TOKEN_RE.findall(text.lower())


def stable_bucket(text: str, buckets: int) -> int:
    """Deterministic hash bucket of a lowercased word.

    The empty string maps to bucket 0, which no other word uses.
    """
    key = text.lower()
    if not key:
        return 0
    digest = hashlib.blake2b(key.encode("utf-8"), digest_size=8).digest()
    return 1 + int.from_bytes(digest, "little") % (buckets - 1)


class ProviderKind(Enum):
    """Roles a provider can be registered for."""

    QUESTION = "question"
    WORD = "word"
    VISUAL = "visual"


class EmbeddingProvider(nn.Module, ABC):
    """Abstract base class for embedding providers."""

    @property
    @abstractmethod
    def name(self) -> str:
        """Provider name."""

    @property
    @abstractmethod
    def width(self) -> int:
        """Declared output width."""


class TextProvider(EmbeddingProvider):
    """Provider mapping words to ids and ids to vectors."""

    @abstractmethod
    def index(self, word: str) -> int:
        """Row id of a (lowercased) word."""

    def encode(self, words: list[str]) -> torch.Tensor:
        return torch.tensor([self.index(w) for w in words], dtype=torch.long)


class HashedWordVectors(TextProvider):
    """Trainable word table keyed by a stable hash of the lowercased word.

    Stands in for pretrained subword vectors; distinct words share a row only
    at the table's collision rate.
    """

    def __init__(self, buckets: int = 2**15, width: int = 300) -> None:
        super().__init__()
        if buckets < 2:
            raise EncodingError(f"Need at least 2 hash buckets, got {buckets}")
        self.buckets = buckets
        self._width = width
        self.table = nn.Embedding(buckets, width)
        nn.init.normal_(self.table.weight, std=0.1)

    @property
    def name(self) -> str:
        return "hashed"

    @property
    def width(self) -> int:
        return self._width

    def index(self, word: str) -> int:
        return stable_bucket(word, self.buckets)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return self.table(ids)

    def word_vec(self, text: str) -> torch.Tensor:
        """Vector of a single word."""
        return self.table.weight[self.index(text)]


class PretrainedWordVectors(TextProvider):
    """Frozen vectors loaded from a ``word -> vector`` mapping.

    Unknown words map to a zero row.
    """

    def __init__(self, vectors: Mapping[str, np.ndarray]) -> None:
        super().__init__()
        words = sorted(vectors)
        if not words:
            raise EncodingError("Pretrained vector mapping is empty")
        width = int(np.asarray(vectors[words[0]]).shape[-1])
        matrix = np.zeros((len(words) + 1, width), dtype=np.float32)
        for i, word in enumerate(words, start=1):
            vec = np.asarray(vectors[word], dtype=np.float32)
            if vec.shape != (width,):
                raise ProviderWidthError(f"Vector for {word!r} has shape {vec.shape}")
            matrix[i] = vec
        self._rows = {w.lower(): i for i, w in enumerate(words, start=1)}
        self._width = width
        self.register_buffer("table", torch.from_numpy(matrix))

    @property
    def name(self) -> str:
        return "pretrained"

    @property
    def width(self) -> int:
        return self._width

    def index(self, word: str) -> int:
        return self._rows.get(word.lower(), 0)

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return self.table[ids]


class LearnedQuestionEmbedding(TextProvider):
    """Trainable question word table producing ``L x d`` matrices plus a mask."""

    def __init__(self, buckets: int, width: int, max_len: int) -> None:
        super().__init__()
        self.buckets = buckets
        self.max_len = max_len
        self._width = width
        self.table = nn.Embedding(buckets, width)
        nn.init.normal_(self.table.weight, std=0.02)

    @property
    def name(self) -> str:
        return "learned-question"

    @property
    def width(self) -> int:
        return self._width

    def index(self, word: str) -> int:
        return stable_bucket(word, self.buckets)

    def encode_question(self, text: str) -> tuple[torch.Tensor, torch.Tensor]:
        """Tokenize, truncate and pad a question to ``max_len`` ids."""
        words = tokenize(text)[: self.max_len]
        ids = torch.zeros(self.max_len, dtype=torch.long)
        mask = torch.zeros(self.max_len, dtype=torch.bool)
        if words:
            ids[: len(words)] = self.encode(words)
            mask[: len(words)] = True
        return ids, mask

    def forward(self, ids: torch.Tensor) -> torch.Tensor:
        return self.table(ids)


class IdentityVisualProvider(EmbeddingProvider):
    """Frame features arrive precomputed; only the width is enforced."""

    def __init__(self, width: int) -> None:
        super().__init__()
        self._width = width

    @property
    def name(self) -> str:
        return "identity"

    @property
    def width(self) -> int:
        return self._width

    def forward(self, features: torch.Tensor) -> torch.Tensor:
        if features.shape[-1] != self._width:
            raise EncodingError(
                f"Visual features have width {features.shape[-1]}, expected {self._width}"
            )
        return features


class ProviderRegistry(nn.Module):
    """Holds the active provider for each role.

    Widths are checked at registration so a mis-sized pretrained table fails
    before any batch is built.
    """

    def __init__(self) -> None:
        super().__init__()
        self.providers = nn.ModuleDict()

    def register(self, kind: ProviderKind, provider: EmbeddingProvider, width: int) -> None:
        """Register a provider for a role.

        Raises:
            ProviderWidthError: The provider's declared width differs from ``width``.
        """
        if provider.width != width:
            raise ProviderWidthError(
                f"{kind.value} provider {provider.name!r} has width {provider.width}, "
                f"expected {width}"
            )
        self.providers[kind.value] = provider
        logger.debug(f"Registered {kind.value} provider: {provider.name}")

    def get(self, kind: ProviderKind) -> Optional[EmbeddingProvider]:
        return self.providers[kind.value] if kind.value in self.providers else None

    @property
    def question(self) -> LearnedQuestionEmbedding:
        return self.providers[ProviderKind.QUESTION.value]

    @property
    def word(self) -> TextProvider:
        return self.providers[ProviderKind.WORD.value]

    @property
    def visual(self) -> EmbeddingProvider:
        return self.providers[ProviderKind.VISUAL.value]
