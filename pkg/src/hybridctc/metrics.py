"""Word error rate via minimum edit alignment, with OOV error accounting.

Alignment tie-breaking is fixed (substitution preferred over insertion
over deletion) so per-utterance breakdowns are reproducible. The OOV
accounting replays a word-only hypothesis with every ``<OOV>`` marker
swapped for its aligned reference word, which prices how much error the
marker itself contributes and anchors the recovery-rate denominator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .tokenizer import OOV_WORD


@dataclass(frozen=True)
class AlignmentOp:
    kind: str  # "match" | "sub" | "ins" | "del"
    ref_index: int | None
    hyp_index: int | None


def align_words(reference: Sequence[str], hypothesis: Sequence[str]) -> list[AlignmentOp]:
    """Minimum-cost word alignment with deterministic tie-breaking."""
    n, m = len(reference), len(hypothesis)
    cost = [[0] * (m + 1) for _ in range(n + 1)]
    for i in range(1, n + 1):
        cost[i][0] = i
    for j in range(1, m + 1):
        cost[0][j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = cost[i - 1][j - 1] + (reference[i - 1] != hypothesis[j - 1])
            ins = cost[i][j - 1] + 1
            dele = cost[i - 1][j] + 1
            cost[i][j] = min(sub, ins, dele)
    ops: list[AlignmentOp] = []
    i, j = n, m
    while i > 0 or j > 0:
        if i > 0 and j > 0:
            sub = cost[i - 1][j - 1] + (reference[i - 1] != hypothesis[j - 1])
            if cost[i][j] == sub:
                kind = "match" if reference[i - 1] == hypothesis[j - 1] else "sub"
                ops.append(AlignmentOp(kind, i - 1, j - 1))
                i, j = i - 1, j - 1
                continue
        if j > 0 and cost[i][j] == cost[i][j - 1] + 1:
            ops.append(AlignmentOp("ins", None, j - 1))
            j -= 1
            continue
        ops.append(AlignmentOp("del", i - 1, None))
        i -= 1
    ops.reverse()
    return ops


@dataclass(frozen=True)
class UtteranceScore:
    utt_id: str
    reference: tuple[str, ...]
    hypothesis: tuple[str, ...]
    substitutions: int
    insertions: int
    deletions: int

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def reference_words(self) -> int:
        return len(self.reference)


@dataclass(frozen=True)
class WerReport:
    utterances: tuple[UtteranceScore, ...]

    @property
    def substitutions(self) -> int:
        return sum(u.substitutions for u in self.utterances)

    @property
    def insertions(self) -> int:
        return sum(u.insertions for u in self.utterances)

    @property
    def deletions(self) -> int:
        return sum(u.deletions for u in self.utterances)

    @property
    def reference_words(self) -> int:
        return sum(u.reference_words for u in self.utterances)

    @property
    def errors(self) -> int:
        return self.substitutions + self.insertions + self.deletions

    @property
    def wer(self) -> float:
        if self.reference_words == 0:
            return 0.0 if self.errors == 0 else float("inf")
        return self.errors / self.reference_words


def _score_one(utt_id: str, reference: Sequence[str], hypothesis: Sequence[str]) -> UtteranceScore:
    ops = align_words(reference, hypothesis)
    kinds = [op.kind for op in ops]
    return UtteranceScore(
        utt_id=utt_id,
        reference=tuple(reference),
        hypothesis=tuple(hypothesis),
        substitutions=kinds.count("sub"),
        insertions=kinds.count("ins"),
        deletions=kinds.count("del"),
    )


def wer(reference: Sequence[str], hypothesis: Sequence[str], utt_id: str = "utt") -> WerReport:
    return WerReport(utterances=(_score_one(utt_id, reference, hypothesis),))


def score_corpus(
    pairs: Sequence[tuple[str, Sequence[str], Sequence[str]]]
) -> WerReport:
    """Aggregate WER over ``(utt_id, reference, hypothesis)`` triples."""
    return WerReport(utterances=tuple(_score_one(*p) for p in pairs))


@dataclass(frozen=True)
class OovAttribution:
    baseline: WerReport
    oracle: WerReport
    contribution: float  # baseline WER minus oracle WER


def _oracle_hypothesis(reference: Sequence[str], hypothesis: Sequence[str]) -> list[str]:
    ops = align_words(reference, hypothesis)
    out: list[str] = []
    for op in ops:
        if op.hyp_index is None:
            continue
        word = hypothesis[op.hyp_index]
        if word == OOV_WORD:
            if op.ref_index is None:
                continue  # marker aligned as an insertion: drop it
            out.append(reference[op.ref_index])
        else:
            out.append(word)
    return out


def oov_attributed_wer(report: WerReport) -> OovAttribution:
    """Split a word-only report's WER into an oracle part and the OOV part.

    The oracle rescoring replaces every ``<OOV>`` marker with the
    reference word it aligned to (markers aligned as insertions are
    dropped), so ``contribution`` is the error the markers themselves
    cost.
    """
    oracle_pairs = [
        (u.utt_id, u.reference, _oracle_hypothesis(u.reference, u.hypothesis))
        for u in report.utterances
    ]
    oracle = score_corpus(oracle_pairs)
    return OovAttribution(baseline=report, oracle=oracle,
                          contribution=report.wer - oracle.wer)


def recovery_rate_from_wers(baseline_wer: float, hybrid_wer: float,
                            oov_contribution: float) -> float | None:
    """Share of OOV-attributed error removed; None when nothing to recover."""
    if oov_contribution <= 0:
        return None
    return (baseline_wer - hybrid_wer) / oov_contribution


def recovery_rate(word_only: WerReport, hybrid: WerReport) -> float | None:
    attribution = oov_attributed_wer(word_only)
    return recovery_rate_from_wers(word_only.wer, hybrid.wer, attribution.contribution)
