"""Token segments over frame alignments and their overlap arithmetic.

A token's segment is its spike frames plus every blank frame
immediately preceding the spike, back to the end of the previous
non-blank run. Leading blanks therefore attach to the first token;
trailing blanks after the last token belong to no segment.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .tokenizer import CharSet, decode_chars


@dataclass(frozen=True)
class TokenSegment:
    token_id: int
    start: int
    end: int  # inclusive

    def __post_init__(self):
        if self.start < 0 or self.end < self.start:
            raise ValueError(f"bad segment bounds ({self.start}, {self.end})")

    def __len__(self) -> int:
        return self.end - self.start + 1


@dataclass(frozen=True)
class WordSpan:
    word: str
    start: int
    end: int  # inclusive

    def __len__(self) -> int:
        return self.end - self.start + 1


def extract_segments(alignment: Sequence[int], blank_id: int) -> list[TokenSegment]:
    """Segments of every non-blank run in a frame-level alignment."""
    segments: list[TokenSegment] = []
    seg_start = 0  # first frame not yet claimed by a finished segment
    run_token: int | None = None
    run_end = -1
    for t, tok in enumerate(alignment):
        tok = int(tok)
        if tok == blank_id:
            if run_token is not None:
                segments.append(TokenSegment(run_token, seg_start, run_end))
                seg_start = run_end + 1
                run_token = None
            continue
        if run_token is None:
            run_token = tok
        elif tok != run_token:
            segments.append(TokenSegment(run_token, seg_start, run_end))
            seg_start = run_end + 1
            run_token = tok
        run_end = t
    if run_token is not None:
        segments.append(TokenSegment(run_token, seg_start, run_end))
    return segments


def word_spans_from_chars(
    char_segments: Sequence[TokenSegment], charset: CharSet
) -> list[WordSpan]:
    """Merge consecutive non-space character segments into word spans.

    Space segments delimit words and are absorbed into none; the word
    surface is the decoded unit sequence of the merged run.
    """
    spans: list[WordSpan] = []
    pending: list[TokenSegment] = []

    def flush():
        if pending:
            units = [seg.token_id for seg in pending]
            (word,) = decode_chars(units, charset) or ("",)
            spans.append(WordSpan(word, pending[0].start, pending[-1].end))
            pending.clear()

    for seg in char_segments:
        if seg.token_id == charset.space_id:
            flush()
        else:
            pending.append(seg)
    flush()
    return spans


def overlap(a: WordSpan | TokenSegment, b: WordSpan | TokenSegment) -> int:
    """Number of frames shared by two inclusive spans; 0 when disjoint."""
    return max(0, min(a.end, b.end) - max(a.start, b.start) + 1)


def segments_to_tsv(segments: Sequence[TokenSegment]) -> str:
    """Diagnostic dump: ``token<TAB>start<TAB>end`` per line."""
    return "".join(f"{s.token_id}\t{s.start}\t{s.end}\n" for s in segments)
