"""Caption text normalization and the token vocabulary.

A single tokenization is used everywhere captions are touched: lowercase,
ASCII punctuation stripped, whitespace split. Concept labeling and the
caption metrics rely on this being the same function.
"""

from __future__ import annotations

import string

_PUNCT_TABLE = str.maketrans({c: " " for c in string.punctuation})

PAD, BOS, EOS, UNK = "<pad>", "<bos>", "<eos>", "<unk>"
SPECIALS = (PAD, BOS, EOS, UNK)
# specials always occupy the first vocabulary slots, in SPECIALS order
PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3


def tokenize(text: str) -> list[str]:
    """Normalize a caption to a token list (lowercase, no ASCII punctuation)."""
    return text.lower().translate(_PUNCT_TABLE).split()


class TokenVocabulary:
    """Token <-> id table for the caption head.

    Ids 0..3 are reserved for the special tokens; the remaining entries are
    ordered by descending corpus frequency with lexicographic tie-break, so
    rebuilding on the same corpus is deterministic.
    """

    def __init__(self, tokens: list[str]):
        self.tokens = list(SPECIALS) + [t for t in tokens if t not in SPECIALS]
        self.index = {t: i for i, t in enumerate(self.tokens)}
        self.pad_id = self.index[PAD]
        self.bos_id = self.index[BOS]
        self.eos_id = self.index[EOS]
        self.unk_id = self.index[UNK]

    def __len__(self) -> int:
        return len(self.tokens)

    @classmethod
    def build(cls, captions, max_size: int | None = None) -> "TokenVocabulary":
        counts: dict[str, int] = {}
        for caption in captions:
            for tok in tokenize(caption):
                counts[tok] = counts.get(tok, 0) + 1
        ranked = sorted(counts, key=lambda t: (-counts[t], t))
        if max_size is not None:
            ranked = ranked[: max(0, max_size - len(SPECIALS))]
        return cls(ranked)

    def encode(self, caption: str, max_len: int) -> list[int]:
        """Token ids for ``caption`` truncated to ``max_len`` positions.

        The sequence is ``w_1 .. w_T <eos>`` padded with ``<pad>``; the
        trailing ``<eos>`` always fits (words are truncated to max_len - 1).
        """
        ids = [self.index.get(t, self.unk_id) for t in tokenize(caption)]
        ids = ids[: max_len - 1] + [self.eos_id]
        return ids + [self.pad_id] * (max_len - len(ids))

    def decode(self, ids) -> list[str]:
        """Tokens up to (excluding) the first ``<eos>``; specials dropped."""
        out = []
        for i in ids:
            i = int(i)
            if i == self.eos_id:
                break
            if i not in (self.pad_id, self.bos_id):
                out.append(self.tokens[i] if i < len(self.tokens) else UNK)
        return out
