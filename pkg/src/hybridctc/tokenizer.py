"""Word vocabulary with rare-word thresholding and character inventories.

Two character inventories are supported:

* ``cs28``: the 26 lowercase letters plus space and blank.
* ``cs83``: 83 units adding word-initial capital units, two-letter
  doubled units (``ll``, ``ss``, ...), and apostrophe units (``'s``,
  ``'re``, ...) to the base set.

The 83-unit inventory is frozen by this module: 26 lowercase + space +
blank + 26 word-initial capitals + 20 doubled letters + 9 apostrophe
units. The doubled letters are the 20 most frequent in the lexicon the
set is built from, padded from ``DEFAULT_DOUBLE_RANKING`` when the
lexicon has fewer than 20 distinct doubles, so the total is always
exactly 83. Serialized sets reload bit-exact, which is what pins a
build's inventory.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence

OOV_WORD = "<OOV>"
SILENCE_WORD = "<SIL>"
BLANK_UNIT = "<blank>"
SPACE_UNIT = " "

_LETTERS = "abcdefghijklmnopqrstuvwxyz"

# Doubled letters by typical lexicon frequency; used to pad the cs83
# inventory when a lexicon yields fewer than 20 distinct doubles.
DEFAULT_DOUBLE_RANKING = (
    "ll", "ss", "ee", "tt", "oo", "ff", "rr", "nn", "pp", "cc",
    "dd", "mm", "gg", "bb", "aa", "zz", "ii", "uu", "kk", "ww",
    "hh", "yy", "jj", "qq", "vv", "xx",
)

APOSTROPHE_UNITS = ("'s", "'t", "'d", "'m", "'ve", "'re", "'ll", "'n", "'")

_VOCAB_FORMAT = "hybridctc-vocab"
_CHARSET_FORMAT = "hybridctc-charset"
_FORMAT_VERSION = 1


class TokenizationError(ValueError):
    """Raised for text that a vocabulary or character set cannot represent."""


def normalize_word(word: str) -> str:
    """Lowercase and fold curly apostrophes to ASCII."""
    return word.lower().replace("’", "'").replace("‘", "'").replace("ʼ", "'")


@dataclass(frozen=True)
class WordVocab:
    """Surface word to id map with OOV, blank, and silence specials.

    Ids 0/1/2 are blank/OOV/silence; surface words carry ids from 3 in
    alphabetical order. Unknown or below-threshold words map to the OOV
    id.
    """

    word_to_id: dict[str, int]
    min_count: int
    blank_id: int = 0
    oov_id: int = 1
    silence_id: int = 2

    @cached_property
    def id_to_word(self) -> dict[int, str]:
        rev = {v: k for k, v in self.word_to_id.items()}
        rev[self.oov_id] = OOV_WORD
        rev[self.silence_id] = SILENCE_WORD
        return rev

    @property
    def size(self) -> int:
        return len(self.word_to_id) + 3

    def id_for(self, word: str) -> int:
        return self.word_to_id.get(normalize_word(word), self.oov_id)

    def word_for(self, token_id: int) -> str:
        if token_id == self.blank_id:
            raise TokenizationError("blank id has no surface form")
        try:
            return self.id_to_word[token_id]
        except KeyError:
            raise TokenizationError(f"unknown word id {token_id}") from None

    def encode(self, words: Sequence[str]) -> list[int]:
        return [self.id_for(w) for w in words]

    def decode(self, ids: Sequence[int]) -> list[str]:
        return [self.word_for(i) for i in ids]


def build_word_vocab(corpus: Iterable[Sequence[str]], min_count: int) -> WordVocab:
    """Vocabulary of words occurring at least ``min_count`` times in ``corpus``."""
    if min_count < 1:
        raise ValueError(f"min_count must be >= 1, got {min_count}")
    counts: Counter[str] = Counter()
    for transcript in corpus:
        counts.update(normalize_word(w) for w in transcript)
    if not counts:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted(w for w, c in counts.items() if c >= min_count)
    word_to_id = {w: 3 + i for i, w in enumerate(kept)}
    return WordVocab(word_to_id=word_to_id, min_count=min_count)


@dataclass(frozen=True)
class CharSet:
    """Character unit inventory; index in ``units`` is the unit id."""

    units: tuple[str, ...]
    variant: str
    blank_id: int
    space_id: int

    @cached_property
    def unit_to_id(self) -> dict[str, int]:
        return {u: i for i, u in enumerate(self.units)}

    @cached_property
    def _match_units(self) -> list[tuple[str, int]]:
        # non-structural units by descending surface length for greedy
        # longest-match segmentation
        skip = {self.blank_id, self.space_id}
        matchable = [
            (u, i)
            for i, u in enumerate(self.units)
            if i not in skip and not u.isupper()
        ]
        return sorted(matchable, key=lambda p: (-len(p[0]), p[0]))

    @cached_property
    def _capital_ids(self) -> dict[str, int]:
        return {u.lower(): i for i, u in enumerate(self.units) if len(u) == 1 and u.isupper()}

    @property
    def size(self) -> int:
        return len(self.units)

    def encode_word(self, word: str) -> list[int]:
        """Greedy longest-match unit ids for one word.

        For cs83 the first letter is emitted as its word-initial capital
        unit; the rest of the word is matched left to right, longest
        unit first.
        """
        word = normalize_word(word)
        if not word:
            raise TokenizationError("cannot encode an empty word")
        ids: list[int] = []
        pos = 0
        if self._capital_ids and word[0] in self._capital_ids:
            ids.append(self._capital_ids[word[0]])
            pos = 1
        while pos < len(word):
            for unit, unit_id in self._match_units:
                if word.startswith(unit, pos):
                    ids.append(unit_id)
                    pos += len(unit)
                    break
            else:
                raise TokenizationError(
                    f"character {word[pos]!r} in word {word!r} is not representable "
                    f"in charset {self.variant}"
                )
        return ids


def build_charset_28() -> CharSet:
    units = (BLANK_UNIT, SPACE_UNIT) + tuple(_LETTERS)
    return CharSet(units=units, variant="cs28", blank_id=0, space_id=1)


def build_charset_83(lexicon: Sequence[str]) -> CharSet:
    """83-unit inventory with doubles ranked by frequency in ``lexicon``."""
    double_counts: Counter[str] = Counter()
    for word in lexicon:
        word = normalize_word(word)
        for ch in word:
            if ch not in _LETTERS and ch != "'":
                raise TokenizationError(
                    f"word {word!r} contains {ch!r}; cs83 admits letters and apostrophes only"
                )
        for a, b in zip(word, word[1:]):
            if a == b and a in _LETTERS:
                double_counts[a + a] += 1
    ranked = sorted(double_counts, key=lambda d: (-double_counts[d], d))
    doubles = ranked[:20]
    for fallback in DEFAULT_DOUBLE_RANKING:
        if len(doubles) >= 20:
            break
        if fallback not in doubles:
            doubles.append(fallback)
    units = (
        (BLANK_UNIT, SPACE_UNIT)
        + tuple(_LETTERS)
        + tuple(_LETTERS.upper())
        + tuple(doubles)
        + APOSTROPHE_UNITS
    )
    assert len(units) == 83
    return CharSet(units=units, variant="cs83", blank_id=0, space_id=1)


def encode_chars(words: Sequence[str], charset: CharSet) -> list[int]:
    """Unit ids for a word sequence, with a space unit between words."""
    ids: list[int] = []
    for k, word in enumerate(words):
        if k > 0:
            ids.append(charset.space_id)
        ids.extend(charset.encode_word(word))
    return ids


def decode_chars(ids: Sequence[int], charset: CharSet) -> list[str]:
    """Inverse of ``encode_chars``: unit ids back to words.

    Capital units fold to lowercase; space units delimit words, and
    leading, trailing, or doubled spaces produce no empty words. The
    caller collapses CTC paths first; blank ids here are an error.
    """
    words: list[str] = []
    current: list[str] = []
    for unit_id in ids:
        unit_id = int(unit_id)
        if unit_id == charset.blank_id:
            raise TokenizationError("decode_chars received a blank; collapse the path first")
        if unit_id == charset.space_id:
            if current:
                words.append("".join(current))
                current = []
            continue
        try:
            surface = charset.units[unit_id]
        except IndexError:
            raise TokenizationError(f"unit id {unit_id} out of range") from None
        current.append(surface.lower())
    if current:
        words.append("".join(current))
    return words


def charset_to_json(charset: CharSet) -> str:
    payload = {
        "format": _CHARSET_FORMAT,
        "version": _FORMAT_VERSION,
        "variant": charset.variant,
        "blank_id": charset.blank_id,
        "space_id": charset.space_id,
        "units": list(charset.units),
    }
    return json.dumps(payload, indent=1, sort_keys=True)


def charset_from_json(text: str) -> CharSet:
    payload = json.loads(text)
    _check_format(payload, _CHARSET_FORMAT)
    return CharSet(
        units=tuple(payload["units"]),
        variant=payload["variant"],
        blank_id=payload["blank_id"],
        space_id=payload["space_id"],
    )


def vocab_to_json(vocab: WordVocab) -> str:
    payload = {
        "format": _VOCAB_FORMAT,
        "version": _FORMAT_VERSION,
        "min_count": vocab.min_count,
        "blank_id": vocab.blank_id,
        "oov_id": vocab.oov_id,
        "silence_id": vocab.silence_id,
        "words": vocab.word_to_id,
    }
    return json.dumps(payload, indent=1, sort_keys=True)


def vocab_from_json(text: str) -> WordVocab:
    payload = json.loads(text)
    _check_format(payload, _VOCAB_FORMAT)
    return WordVocab(
        word_to_id={str(k): int(v) for k, v in payload["words"].items()},
        min_count=int(payload["min_count"]),
        blank_id=int(payload["blank_id"]),
        oov_id=int(payload["oov_id"]),
        silence_id=int(payload["silence_id"]),
    )


def _check_format(payload: dict, expected: str) -> None:
    if payload.get("format") != expected:
        raise ValueError(f"expected a {expected} file, got {payload.get('format')!r}")
    if payload.get("version") != _FORMAT_VERSION:
        raise ValueError(f"unsupported {expected} version {payload.get('version')!r}")


def read_lexicon(path: str | Path) -> list[str]:
    """One word per line; ``#`` starts a comment; blank lines ignored."""
    words: list[str] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            words.append(normalize_word(line))
    return words


def write_lexicon(path: str | Path, words: Sequence[str]) -> None:
    Path(path).write_text("".join(f"{w}\n" for w in words), encoding="utf-8")
