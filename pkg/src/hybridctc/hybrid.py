"""Two-head decoding: word-level greedy output with character backoff.

The word head's greedy transcript is the primary result. Only when it
contains the OOV marker is the character lattice decoded at all; each
marker is then replaced by the character-decoded word with the largest
frame overlap against the marker's segment. Words at non-OOV positions
pass through untouched, which is what makes the splice unable to hurt
accuracy, and every marker maps to exactly one replacement word, each
character word consumed at most once (markers resolve left to right).

Tie rules are fixed for determinism: equal overlap prefers the earlier
character word, then the shorter one. A marker with no overlapping
candidate takes the candidate whose span midpoint is closest; with no
candidates at all the literal marker stays in the transcript and scores
as an error exactly like the word-only baseline.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from .ctc import LogPosteriorLattice, greedy_decode
from .lexicon import CharTrie, constrained_decode, max_output_decode
from .segments import WordSpan, extract_segments, overlap
from .tokenizer import OOV_WORD, CharSet, WordVocab

CHAR_MODES = ("constrained", "max")


@dataclass(frozen=True)
class DecodeConfig:
    char_mode: str = "constrained"
    beam_width: int = 64

    def __post_init__(self):
        if self.char_mode not in CHAR_MODES:
            raise ValueError(f"char_mode must be one of {CHAR_MODES}")
        if self.beam_width < 1:
            raise ValueError("beam_width must be >= 1")


@dataclass(frozen=True)
class OovEvent:
    oov_span: WordSpan
    replacement: str | None
    overlap_frames: int


@dataclass(frozen=True)
class HybridResult:
    words: list[str]
    word_spans: list[WordSpan]  # word-head spans, OOV markers included
    char_spans: list[WordSpan] | None  # None when the char head was never consulted
    oov_events: list[OovEvent] = field(default_factory=list)


def word_spans_from_lattice(lattice: LogPosteriorLattice, vocab: WordVocab) -> list[WordSpan]:
    """Greedy word-head decode as word spans; silence tokens are dropped."""
    alignment, _ = greedy_decode(lattice)
    spans = []
    for seg in extract_segments(alignment, lattice.blank_id):
        if seg.token_id == vocab.silence_id:
            continue
        spans.append(WordSpan(vocab.word_for(seg.token_id), seg.start, seg.end))
    return spans


def splice_oov(
    word_spans: Sequence[WordSpan], char_spans: Sequence[WordSpan]
) -> tuple[list[str], list[OovEvent]]:
    """Replace each OOV span with its largest-overlap character word."""
    words: list[str] = []
    events: list[OovEvent] = []
    consumed: set[int] = set()
    for span in word_spans:
        if span.word != OOV_WORD:
            words.append(span.word)
            continue
        available = [(i, c) for i, c in enumerate(char_spans) if i not in consumed]
        if not available:
            words.append(OOV_WORD)
            events.append(OovEvent(span, None, 0))
            continue
        overlaps = {i: overlap(span, c) for i, c in available}
        best_overlap = max(overlaps.values())
        if best_overlap > 0:
            idx, chosen = min(
                ((i, c) for i, c in available if overlaps[i] == best_overlap),
                key=lambda p: (p[1].start, len(p[1].word), p[0]),
            )
        else:
            mid = (span.start + span.end) / 2.0
            idx, chosen = min(
                available,
                key=lambda p: (abs((p[1].start + p[1].end) / 2.0 - mid),
                               p[1].start, len(p[1].word), p[0]),
            )
        consumed.add(idx)
        words.append(chosen.word)
        events.append(OovEvent(span, chosen.word, overlaps[idx]))
    return words, events


def hybrid_decode(
    word_lattice: LogPosteriorLattice,
    char_lattice: LogPosteriorLattice,
    trie: CharTrie,
    vocab: WordVocab,
    charset: CharSet,
    config: DecodeConfig = DecodeConfig(),
    char_decode_fn: Callable[[LogPosteriorLattice], Sequence[WordSpan]] | None = None,
) -> HybridResult:
    """Word-head transcript with OOV segments backed off to the char head.

    ``char_decode_fn`` overrides the character decoder (tests use this
    to count invocations); by default ``config.char_mode`` selects the
    constrained or the max-output decoder.
    """
    if word_lattice.frames != char_lattice.frames:
        raise ValueError(
            f"lattices disagree on frames: {word_lattice.frames} != {char_lattice.frames}"
        )
    spans = word_spans_from_lattice(word_lattice, vocab)
    if all(s.word != OOV_WORD for s in spans):
        return HybridResult([s.word for s in spans], spans, None)
    if char_decode_fn is None:
        if config.char_mode == "max":
            char_decode_fn = lambda lat: max_output_decode(lat, charset)
        else:
            char_decode_fn = lambda lat: constrained_decode(
                lat, trie, config.beam_width
            ).word_spans
    char_spans = list(char_decode_fn(char_lattice))
    words, events = splice_oov(spans, char_spans)
    return HybridResult(words, spans, char_spans, events)


def result_to_record(utt_id: str, final_words: Sequence[str],
                     word_hyp: Sequence[str] | None = None,
                     char_hyp: Sequence[str] | None = None,
                     oov_events: Sequence[OovEvent] = ()) -> dict:
    """Line-record form of one utterance's decode for JSONL reports."""
    return {
        "id": utt_id,
        "final": list(final_words),
        "word_hyp": list(word_hyp) if word_hyp is not None else None,
        "char_hyp": list(char_hyp) if char_hyp is not None else None,
        "oov_events": [
            {
                "start": e.oov_span.start,
                "end": e.oov_span.end,
                "replacement": e.replacement,
                "overlap": e.overlap_frames,
            }
            for e in oov_events
        ],
    }
