"""Word-level tokenizer and vocabulary file I/O."""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

PAD, UNK, SEP = "<pad>", "<unk>", "<sep>"
_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def split_words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


class Vocab:
    """Ids 0 and 1 are PAD and UNK; SEP is the last id."""

    def __init__(self, words: Iterable[str]):
        seen = []
        for w in words:
            if w not in (PAD, UNK, SEP) and w not in seen:
                seen.append(w)
        self.tokens = [PAD, UNK, *seen, SEP]
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @classmethod
    def build(cls, corpus: Iterable[str]) -> "Vocab":
        words = set()
        for text in corpus:
            words.update(split_words(text))
        return cls(sorted(words))

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def sep_id(self) -> int:
        return len(self.tokens) - 1

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, word: str) -> bool:
        return word in self.index

    def save(self, path: str | Path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Vocab":
        tokens = Path(path).read_text().splitlines()
        if len(tokens) < 3 or tokens[0] != PAD or tokens[1] != UNK or tokens[-1] != SEP:
            raise ValueError(f"{path}: not a vocabulary file (expects PAD, UNK first and SEP last)")
        return cls(tokens[2:-1])


def tokenize(text: str, vocab: Vocab, max_len: int | None = None) -> list[int]:
    """Lower-case, split into words/punctuation, map to ids, append SEP.

    Without ``max_len`` the sequence is returned unpadded; with it, the
    sequence is truncated so SEP stays last and then padded with PAD.
    """
    ids = [vocab.index.get(w, vocab.unk_id) for w in split_words(text)]
    if max_len is not None:
        ids = ids[: max_len - 1]
    ids.append(vocab.sep_id)
    if max_len is not None:
        ids += [vocab.pad_id] * (max_len - len(ids))
    return ids


def unknown_words(text: str, vocab: Vocab) -> list[str]:
    return [w for w in split_words(text) if w not in vocab]


@dataclass
class TextBatch:
    token_ids: np.ndarray  # B x M_max, int
    lengths: np.ndarray  # B

    @property
    def sep_position(self) -> np.ndarray:
        return self.lengths - 1

    @property
    def key_mask(self) -> np.ndarray:
        return np.arange(self.token_ids.shape[1])[None, :] < self.lengths[:, None]

    @classmethod
    def from_texts(cls, texts: list[str], vocab: Vocab, max_len: int) -> "TextBatch":
        rows, lengths = [], []
        for t in texts:
            ids = tokenize(t, vocab, max_len)
            rows.append(ids)
            lengths.append(ids.index(vocab.sep_id) + 1)
        return cls(np.array(rows, dtype=np.int64), np.array(lengths, dtype=np.int64))
