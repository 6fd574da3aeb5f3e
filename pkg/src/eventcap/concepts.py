"""Concept vocabulary built from training captions and multi-hot event labels.

A concept is a frequent content token. Instead of a POS tagger, admission is
controlled by an allow-list (exact for synthetic data, file-based otherwise)
or, absent one, a stopword deny-list. Counting is per occurrence, ranking is
frequency-descending with lexicographic tie-break, so builds are bit-identical
across runs and platforms for identical corpus bytes.
"""

from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .text import tokenize

# Function words excluded when no allow-list is supplied.
DEFAULT_STOPWORDS = frozenset(
    """a an and are as at be but by for from in into is it its no not of on or
    over s so that the their then there these this those to under was were will
    with""".split()
)


@dataclass(frozen=True)
class ConceptVocabulary:
    """Ordered concept tokens with a token -> position map.

    ``complete`` is False when the corpus had fewer admissible tokens than
    requested; the vocabulary is then shorter than n_requested.
    """

    entries: tuple
    n_requested: int
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        if len(set(self.entries)) != len(self.entries):
            raise ValueError("concept entries must be unique")
        object.__setattr__(self, "index", {t: k for k, t in enumerate(self.entries)})

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def complete(self) -> bool:
        return len(self.entries) == self.n_requested

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.entries:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path) -> "ConceptVocabulary":
        with open(path, encoding="utf-8") as fh:
            entries = tuple(line.strip() for line in fh if line.strip())
        return cls(entries=entries, n_requested=len(entries))


def read_token_list(path) -> frozenset:
    """Plain token-list file (allow-list or deny-list), one token per line."""
    with open(path, encoding="utf-8") as fh:
        return frozenset(line.strip().lower() for line in fh if line.strip())


def build_vocabulary(
    captions,
    n_c: int,
    content_lexicon=None,
    stopwords=DEFAULT_STOPWORDS,
) -> ConceptVocabulary:
    """Top-n_c admissible tokens of the caption corpus.

    With an allow-list only its members are admitted; otherwise every token
    outside the deny-list is. Occurrences are counted per token instance.
    """
    captions = list(captions)
    if not captions:
        raise ValueError("cannot build a concept vocabulary from an empty corpus")
    if n_c < 1:
        raise ValueError(f"n_c must be >= 1, got {n_c}")
    if content_lexicon is not None:
        content_lexicon = frozenset(t.lower() for t in content_lexicon)
        admit = content_lexicon.__contains__
    else:
        admit = lambda t: t not in stopwords  # noqa: E731
    counts = Counter(
        tok for caption in captions for tok in tokenize(caption) if admit(tok)
    )
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    entries = tuple(token for token, _ in ranked[:n_c])
    if len(entries) < n_c:
        warnings.warn(
            f"only {len(entries)} admissible concept tokens for n_c={n_c}",
            stacklevel=2,
        )
    return ConceptVocabulary(entries=entries, n_requested=n_c)


def label_events(caption, vocab: ConceptVocabulary) -> np.ndarray:
    """Multi-hot label: bit k set iff vocabulary entry k occurs in the caption.

    Accepts a raw string or an already tokenized sequence; normalization is
    idempotent so either form yields the same bits.
    """
    tokens = tokenize(caption) if isinstance(caption, str) else [str(t).lower() for t in caption]
    present = set(tokens)
    bits = np.zeros(len(vocab), dtype=np.float32)
    for k, token in enumerate(vocab.entries):
        if token in present:
            bits[k] = 1.0
    return bits


def label_matrix(captions, vocab: ConceptVocabulary) -> np.ndarray:
    """Stack of label_events over a list of captions, shape (E, N_c)."""
    if len(captions) == 0:
        return np.zeros((0, len(vocab)), dtype=np.float32)
    return np.stack([label_events(c, vocab) for c in captions])
