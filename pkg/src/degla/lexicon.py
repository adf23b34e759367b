"""Word lists with part-of-speech tags and per-word replacement pools."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

NOUN, ADJ, VERB, OTHER = "NOUN", "ADJ", "VERB", "OTHER"
TAGS = (NOUN, ADJ, VERB, OTHER)

# synthetic benchmark vocabulary, a subset of the shipped lexicon
SYNTH_NOUNS = ("dog", "cat", "horse", "bird", "car", "boat", "ball", "box")
SYNTH_ADJECTIVES = ("red", "blue", "green", "yellow", "small", "large", "black", "white")
SYNTH_VERBS = ("chases", "watches", "follows", "pushes")


@dataclass
class Lexicon:
    tags: dict[str, str] = field(default_factory=dict)
    replacements: dict[str, tuple[str, ...]] = field(default_factory=dict)

    def __post_init__(self):
        for word, tag in self.tags.items():
            if tag not in TAGS:
                raise ValueError(f"unknown tag {tag!r} for {word!r}")
        # a pool never offers the word it replaces
        self.replacements = {w: tuple(r for r in pool if r != w) for w, pool in self.replacements.items()}

    def tag(self, word: str) -> str:
        return self.tags.get(word, OTHER)

    def pool(self, word: str) -> tuple[str, ...]:
        return self.replacements.get(word, ())

    def words(self, tag: str | None = None) -> list[str]:
        return sorted(w for w, t in self.tags.items() if tag is None or t == tag)

    @property
    def nouns(self) -> list[str]:
        return self.words(NOUN)

    @property
    def adjectives(self) -> list[str]:
        return self.words(ADJ)

    def restricted(self, words) -> Lexicon:
        """Same tags for ``words`` only, with pools cut down to that word set."""
        keep = set(words)
        return Lexicon({w: t for w, t in self.tags.items() if w in keep},
                       {w: tuple(r for r in p if r in keep) for w, p in self.replacements.items() if w in keep})

    def to_dict(self) -> dict:
        return {w: {"tag": self.tags[w], "replacements": list(self.pool(w))} for w in sorted(self.tags)}

    @classmethod
    def from_dict(cls, doc: dict) -> Lexicon:
        tags, pools = {}, {}
        for word, entry in doc.items():
            tags[word] = entry["tag"]
            pools[word] = tuple(entry.get("replacements", ()))
        return cls(tags, pools)


def load_lexicon(path=None) -> Lexicon:
    """Read a lexicon file (JSON: word -> {tag, replacements}); None loads the shipped one."""
    if path is None:
        raw = resources.files("degla").joinpath("data/lexicon.json").read_text()
    else:
        raw = Path(path).read_text()
    return Lexicon.from_dict(json.loads(raw))


def save_lexicon(lexicon: Lexicon, path) -> None:
    Path(path).write_text(json.dumps(lexicon.to_dict(), indent=1, sort_keys=True))
