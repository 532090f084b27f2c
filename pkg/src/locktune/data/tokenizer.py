from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from ..errors import TokenizationError
from ..util.fs import write_text_atomic

PAD, UNK, BOS, EOS = "[PAD]", "[UNK]", "[BOS]", "[EOS]"
SPECIALS = (PAD, UNK, BOS, EOS)


def words(caption: str) -> list[str]:
    return caption.strip().lower().split()


@dataclass
class Vocab:
    """Word-level vocabulary. Ids 0-3 are the special tokens, in SPECIALS order."""

    tokens: list[str]
    index: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        if tuple(self.tokens[: len(SPECIALS)]) != SPECIALS:
            raise TokenizationError(f"vocab must start with {SPECIALS}")
        if len(set(self.tokens)) != len(self.tokens):
            raise TokenizationError("vocab has duplicate tokens")
        self.index = {t: i for i, t in enumerate(self.tokens)}

    @staticmethod
    def build(texts: Iterable[str]) -> "Vocab":
        seen = sorted({w for t in texts for w in words(t.replace("{}", " "))} - set(SPECIALS))
        return Vocab(list(SPECIALS) + seen)

    def __len__(self) -> int:
        return len(self.tokens)

    @property
    def pad_id(self) -> int:
        return 0

    @property
    def unk_id(self) -> int:
        return 1

    @property
    def bos_id(self) -> int:
        return 2

    @property
    def eos_id(self) -> int:
        return 3

    def id_of(self, word: str) -> int:
        return self.index.get(word, self.unk_id)

    def save(self, path: Path) -> None:
        write_text_atomic(path, "\n".join(self.tokens) + "\n")

    @staticmethod
    def load(path: Path) -> "Vocab":
        try:
            lines = path.read_text(encoding="utf-8").splitlines()
        except FileNotFoundError:
            raise TokenizationError(f"vocab file not found: {path}") from None
        return Vocab([ln for ln in lines if ln])


def tokenize(caption: str, vocab: Vocab, max_seq_len: int) -> tuple[np.ndarray, np.ndarray]:
    """[BOS] + word ids + [EOS], padded with [PAD] to max_seq_len.

    Returns (ids int64[L], mask bool[L]); unknown words map to [UNK].
    """
    ws = words(caption)
    n = len(ws) + 2
    if n > max_seq_len:
        raise TokenizationError(f"caption needs {n} tokens but max_seq_len is {max_seq_len}: {caption!r}")
    ids = np.full(max_seq_len, vocab.pad_id, dtype=np.int64)
    ids[0] = vocab.bos_id
    ids[1 : n - 1] = [vocab.id_of(w) for w in ws]
    ids[n - 1] = vocab.eos_id
    mask = np.zeros(max_seq_len, dtype=bool)
    mask[:n] = True
    return ids, mask


def tokenize_batch(captions: Sequence[str], vocab: Vocab, max_seq_len: int) -> tuple[np.ndarray, np.ndarray]:
    ids = np.empty((len(captions), max_seq_len), dtype=np.int64)
    mask = np.empty((len(captions), max_seq_len), dtype=bool)
    for i, c in enumerate(captions):
        ids[i], mask[i] = tokenize(c, vocab, max_seq_len)
    return ids, mask


def detokenize(ids: Sequence[int] | np.ndarray, vocab: Vocab) -> str:
    out: list[str] = []
    for i in np.asarray(ids).reshape(-1).tolist():
        if i == vocab.eos_id:
            break
        if i in (vocab.pad_id, vocab.bos_id):
            continue
        if not 0 <= i < len(vocab):
            raise TokenizationError(f"token id {i} outside vocab of size {len(vocab)}")
        out.append(vocab.tokens[i])
    return " ".join(out)
