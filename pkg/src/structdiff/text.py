"""Closed caption vocabulary and tokenization.

The vocabulary is fixed at import time so token ids are stable across runs
and machines; captions are grammar-templated, never free-form.
"""

from __future__ import annotations

from dataclasses import dataclass

PAD_WORD = "<pad>"
END_WORD = "<end>"

SHAPES = ("circle", "square", "triangle")
COLORS = ("red", "green", "blue", "yellow")
SIZES = ("small", "large")
POSITIONS = ("top-left", "top-right", "bottom-left", "bottom-right", "center")
FILLERS = (
    "bright", "solid", "plain", "neat", "vivid", "bold",
    "clean", "simple", "tidy", "calm", "cool", "warm",
)
GLUE = ("a", "at", "and")

VOCAB = (PAD_WORD, END_WORD) + SHAPES + COLORS + SIZES + POSITIONS + FILLERS + GLUE
WORD_TO_ID = {w: i for i, w in enumerate(VOCAB)}
PAD_ID = WORD_TO_ID[PAD_WORD]
END_ID = WORD_TO_ID[END_WORD]

MAX_CAPTION_LEN = 16
MIN_CAPTION_LEN = 3


@dataclass(frozen=True)
class Caption:
    """Tokenized caption: `tokens` includes the end token, never padding."""

    tokens: tuple[int, ...]
    raw_text: str

    def __post_init__(self):
        n = len(self.tokens)
        if not (MIN_CAPTION_LEN <= n <= MAX_CAPTION_LEN):
            raise ValueError(f"caption length {n} outside [{MIN_CAPTION_LEN}, {MAX_CAPTION_LEN}]")
        for tok in self.tokens:
            if not (0 <= tok < len(VOCAB)):
                raise ValueError(f"token id {tok} outside vocabulary of size {len(VOCAB)}")
        if self.tokens[-1] != END_ID:
            raise ValueError("caption must end with the end token")

    def padded(self, length: int = MAX_CAPTION_LEN) -> list[int]:
        if len(self.tokens) > length:
            raise ValueError(f"caption of {len(self.tokens)} tokens does not fit in {length}")
        return list(self.tokens) + [PAD_ID] * (length - len(self.tokens))


def caption_from_words(words: list[str]) -> Caption:
    """Build a Caption from vocabulary words; appends the end token."""
    ids = []
    for w in words:
        if w not in WORD_TO_ID:
            raise ValueError(f"word {w!r} not in the closed vocabulary")
        ids.append(WORD_TO_ID[w])
    return Caption(tokens=tuple(ids) + (END_ID,), raw_text=" ".join(words))
