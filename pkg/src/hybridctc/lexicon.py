"""Prefix graph over a word lexicon and character-lattice decoders.

Two ways to turn a character posterior lattice into words:

* ``max_output_decode``: per-frame argmax units, collapsed and grouped
  at space units. Fast, unconstrained, free to emit non-words.
* ``constrained_decode``: frame-synchronous beam search that only ever
  spells root-to-terminal paths of a prefix trie, so every emitted word
  is in the lexicon. Scoring is max-over-alignment (a single winning
  frame-level path), because word spans need one alignment to read
  timings from; no language model term, the network score is all there
  is.

Word boundaries in the beam search happen at an emitted space unit or
by jumping from a terminal node straight to a root child, which covers
character outputs that skip spaces. Hot words enter by rebuilding the
trie with ``add_words``; model weights are untouched.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .ctc import InvalidInputError, LogPosteriorLattice, greedy_decode
from .segments import TokenSegment, WordSpan, extract_segments, word_spans_from_chars
from .tokenizer import CharSet, normalize_word

logger = logging.getLogger(__name__)

_NO_SYMBOL = -1  # "previous frame was blank (or nothing yet)"


@dataclass(frozen=True)
class CharTrie:
    """Immutable prefix graph; node 0 is the root.

    ``children[n]`` maps a unit id to the next node; ``terminal_word[n]``
    is the word a root-to-n path spells when n completes one, else None.
    """

    charset: CharSet
    words: tuple[str, ...]
    children: tuple[dict[int, int], ...]
    terminal_word: tuple[str | None, ...]

    @property
    def root(self) -> int:
        return 0

    def accepts(self, units: Sequence[int]) -> bool:
        node = 0
        for unit in units:
            node = self.children[node].get(int(unit))
            if node is None:
                return False
        return self.terminal_word[node] is not None

    def accepted_words(self) -> frozenset[str]:
        return frozenset(self.words)


def build_trie(lexicon: Sequence[str], charset: CharSet) -> CharTrie:
    """Trie accepting exactly ``lexicon`` under the charset's segmentation."""
    words = tuple(sorted({normalize_word(w) for w in lexicon}))
    children: list[dict[int, int]] = [{}]
    terminal: list[str | None] = [None]
    for word in words:
        units = charset.encode_word(word)  # raises naming the word if unencodable
        node = 0
        for unit in units:
            nxt = children[node].get(unit)
            if nxt is None:
                children.append({})
                terminal.append(None)
                nxt = len(children) - 1
                children[node][unit] = nxt
            node = nxt
        terminal[node] = word
    return CharTrie(charset=charset, words=words,
                    children=tuple(children), terminal_word=tuple(terminal))


def add_words(trie: CharTrie, words: Sequence[str]) -> CharTrie:
    """New trie accepting the old lexicon plus ``words``; idempotent."""
    return build_trie(trie.words + tuple(words), trie.charset)


def max_output_decode(lattice: LogPosteriorLattice, charset: CharSet) -> list[WordSpan]:
    """Argmax units collapsed into words; no lexicon constraint."""
    if lattice.vocab_size != charset.size:
        raise InvalidInputError(
            f"lattice vocab {lattice.vocab_size} != charset size {charset.size}"
        )
    alignment, _ = greedy_decode(lattice)
    segments = extract_segments(alignment, charset.blank_id)
    return word_spans_from_chars(segments, charset)


@dataclass(frozen=True)
class _Hyp:
    node: int
    last_sym: int  # unit id emitted at the previous frame, or _NO_SYMBOL
    score: float
    words: tuple[WordSpan, ...]
    pending: tuple[int, ...]  # unit ids of the partially spelled word
    pending_start: int  # segment start of the first pending unit
    last_nonblank: int  # most recent frame holding a non-blank unit
    alignment: tuple[int, ...]

    def order_key(self):
        # smaller is better: high score, then fewer words, then
        # lexicographic words; trailing fields only pin determinism
        return (
            -self.score,
            len(self.words),
            tuple(w.word for w in self.words),
            tuple((w.start, w.end) for w in self.words),
            self.pending,
            self.alignment,
        )


@dataclass(frozen=True)
class BeamResult:
    word_spans: list[WordSpan]
    score: float
    alignment: list[int]
    no_path: bool = False


def _close_word(hyp: _Hyp, trie: CharTrie) -> tuple[WordSpan, ...]:
    word = trie.terminal_word[hyp.node]
    return hyp.words + (WordSpan(word, hyp.pending_start, hyp.last_nonblank),)


def constrained_decode(
    lattice: LogPosteriorLattice, trie: CharTrie, beam_width: int = 64
) -> BeamResult:
    """Best lexicon-valid word sequence under max-over-alignment scoring.

    Hypotheses recombine on (trie node, last unit, emitted word count
    parity), keeping the higher score; ties prefer fewer words, then
    lexicographic order. When no complete hypothesis survives, the
    result is empty and flagged ``no_path``.
    """
    charset = trie.charset
    if lattice.vocab_size != charset.size:
        raise InvalidInputError(
            f"lattice vocab {lattice.vocab_size} != charset size {charset.size}"
        )
    if beam_width < 1:
        raise InvalidInputError(f"beam_width must be >= 1, got {beam_width}")
    blank = charset.blank_id
    space = charset.space_id
    root_children = trie.children[trie.root]

    start = _Hyp(node=trie.root, last_sym=_NO_SYMBOL, score=0.0, words=(),
                 pending=(), pending_start=-1, last_nonblank=-1, alignment=())
    beam = [start]

    for t in range(lattice.frames):
        row = lattice.values[t]
        candidates: dict[tuple, _Hyp] = {}

        def offer(hyp: _Hyp):
            key = (hyp.node, hyp.last_sym, len(hyp.words) % 2)
            held = candidates.get(key)
            if held is None or hyp.order_key() < held.order_key():
                candidates[key] = hyp

        for hyp in beam:
            if row[blank] > -np.inf:
                offer(replace(hyp, last_sym=_NO_SYMBOL, score=hyp.score + row[blank],
                              alignment=hyp.alignment + (blank,)))
            if hyp.last_sym != _NO_SYMBOL and row[hyp.last_sym] > -np.inf:
                offer(replace(hyp, score=hyp.score + row[hyp.last_sym], last_nonblank=t,
                              alignment=hyp.alignment + (hyp.last_sym,)))
            at_terminal = trie.terminal_word[hyp.node] is not None
            for unit, child in trie.children[hyp.node].items():
                if unit == hyp.last_sym or row[unit] == -np.inf:
                    continue
                seg_start = hyp.last_nonblank + 1
                offer(_Hyp(
                    node=child, last_sym=unit, score=hyp.score + row[unit],
                    words=hyp.words, pending=hyp.pending + (unit,),
                    pending_start=hyp.pending_start if hyp.pending else seg_start,
                    last_nonblank=t, alignment=hyp.alignment + (unit,),
                ))
            if space != hyp.last_sym and row[space] > -np.inf:
                if hyp.node == trie.root:
                    offer(replace(hyp, last_sym=space, score=hyp.score + row[space],
                                  last_nonblank=t, alignment=hyp.alignment + (space,)))
                elif at_terminal:
                    offer(_Hyp(
                        node=trie.root, last_sym=space, score=hyp.score + row[space],
                        words=_close_word(hyp, trie), pending=(), pending_start=-1,
                        last_nonblank=t, alignment=hyp.alignment + (space,),
                    ))
            if at_terminal and hyp.node != trie.root:
                closed = _close_word(hyp, trie)
                for unit, child in root_children.items():
                    if unit == hyp.last_sym or row[unit] == -np.inf:
                        continue
                    offer(_Hyp(
                        node=child, last_sym=unit, score=hyp.score + row[unit],
                        words=closed, pending=(unit,), pending_start=hyp.last_nonblank + 1,
                        last_nonblank=t, alignment=hyp.alignment + (unit,),
                    ))

        beam = sorted(candidates.values(), key=_Hyp.order_key)[:beam_width]
        if not beam:
            break

    finals = []
    for hyp in beam:
        if hyp.node == trie.root:
            finals.append(hyp)
        elif trie.terminal_word[hyp.node] is not None:
            finals.append(replace(hyp, words=_close_word(hyp, trie), pending=(),
                                  node=trie.root))
    if not finals:
        logger.warning("constrained decode found no complete hypothesis (no-path)")
        return BeamResult(word_spans=[], score=float("-inf"), alignment=[], no_path=True)
    best = min(finals, key=_Hyp.order_key)
    return BeamResult(word_spans=list(best.words), score=best.score,
                      alignment=list(best.alignment))
