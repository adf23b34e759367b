"""Caption normalization shared by the tagger and the tokenizer."""

import re

_WORD = re.compile(r"[a-z0-9]+(?:'[a-z]+)?")


def words(text: str) -> list[str]:
    """Lowercase and strip punctuation; returns the word sequence."""
    return _WORD.findall(text.lower())


def normalize(text: str) -> str:
    return " ".join(words(text))
