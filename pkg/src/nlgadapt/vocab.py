from __future__ import annotations

from typing import Iterable, Sequence

BOS = "<s>"
EOS = "</s>"
UNK = "<unk>"


class Vocabulary:
    """Token <-> index map. Index 0/1/2 are BOS/EOS/UNK."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [BOS, EOS, UNK]
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.stoi:
            self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return self.stoi[token]

    @classmethod
    def build(cls, sentences: Iterable[Sequence[str]], extra: Iterable[str] = ()) -> "Vocabulary":
        """Sorted for reproducibility regardless of corpus order."""
        seen = set(extra)
        for sent in sentences:
            seen.update(sent)
        seen -= {BOS, EOS, UNK}
        return cls(sorted(seen))

    @property
    def bos(self) -> int:
        return 0

    @property
    def eos(self) -> int:
        return 1

    @property
    def unk(self) -> int:
        return 2

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def index(self, token: str) -> int:
        return self.stoi.get(token, self.unk)

    def encode(self, tokens: Sequence[str]) -> list[int]:
        return [self.index(t) for t in tokens]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def to_list(self) -> list[str]:
        return list(self.itos)

    @classmethod
    def from_list(cls, itos: Sequence[str]) -> "Vocabulary":
        if list(itos[:3]) != [BOS, EOS, UNK]:
            raise ValueError("vocabulary must start with BOS, EOS, UNK")
        return cls(itos[3:])

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos
