"""Tokenization, synonyms and the word lists behind lexical matching."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

_TOKEN = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    return _TOKEN.findall(text.lower())


def contains_phrase(tokens: Sequence[str], phrase: Sequence[str]) -> bool:
    """True if ``phrase`` occurs as a contiguous run in ``tokens`` (word-boundary match)."""
    n = len(phrase)
    if n == 0 or n > len(tokens):
        return False
    first = phrase[0]
    for i, tok in enumerate(tokens[: len(tokens) - n + 1]):
        if tok == first and list(tokens[i : i + n]) == list(phrase):
            return True
    return False


def jaccard(a: str, b: str) -> float:
    ta, tb = set(tokenize(a)), set(tokenize(b))
    if not ta and not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


@dataclass
class Lexicon:
    entities: list[str] = field(default_factory=list)
    colors: list[str] = field(default_factory=list)
    materials: list[str] = field(default_factory=list)
    sizes: list[str] = field(default_factory=list)
    predicates: dict[str, str] = field(default_factory=dict)
    inverse_predicates: dict[str, str] = field(default_factory=dict)
    affordances: dict[str, str] = field(default_factory=dict)
    synonyms: list[list[str]] = field(default_factory=list)
    stopwords: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._syn: dict[str, tuple[str, ...]] = {}
        for group in self.synonyms:
            words = tuple(dict.fromkeys(w.lower() for w in group))
            for w in words:
                merged = self._syn.get(w, (w,))
                self._syn[w] = tuple(dict.fromkeys(merged + words))
        self._stop = frozenset(self.stopwords)

    def variants(self, term: str) -> tuple[str, ...]:
        """The term plus its synonyms, lowercase; the term itself comes first."""
        term = " ".join(tokenize(term))
        return self._syn.get(term, (term,))

    def is_stopword(self, token: str) -> bool:
        return token in self._stop

    def extended(self, other: dict) -> Lexicon:
        """Merge a partial lexicon document (lists are unioned, maps updated)."""
        data = self.to_dict()
        for key, value in other.items():
            if key not in data:
                raise ValueError(f"unknown lexicon section {key!r}")
            if isinstance(data[key], dict):
                data[key].update(value)
            else:
                data[key] = list(dict.fromkeys(list(data[key]) + list(value)))
        return Lexicon(**data)

    def to_dict(self) -> dict:
        return {
            "entities": list(self.entities),
            "colors": list(self.colors),
            "materials": list(self.materials),
            "sizes": list(self.sizes),
            "predicates": dict(self.predicates),
            "inverse_predicates": dict(self.inverse_predicates),
            "affordances": dict(self.affordances),
            "synonyms": [list(g) for g in self.synonyms],
            "stopwords": list(self.stopwords),
        }


@lru_cache(maxsize=1)
def _default_doc() -> str:
    return resources.files("tourgraph.data").joinpath("lexicon.json").read_text(encoding="utf-8")


def default_lexicon() -> Lexicon:
    return Lexicon(**json.loads(_default_doc()))


def load_lexicon(extra: str | Path | None = None) -> Lexicon:
    lex = default_lexicon()
    if extra is not None and Path(extra).exists():
        lex = lex.extended(json.loads(Path(extra).read_text(encoding="utf-8")))
    return lex


def expand_terms(lex: Lexicon, terms: Iterable[str]) -> list[str]:
    out: list[str] = []
    for t in terms:
        for v in lex.variants(t):
            if v and v not in out:
                out.append(v)
    return out
