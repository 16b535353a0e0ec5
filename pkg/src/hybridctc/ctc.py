"""Log-domain CTC: loss, gradients, path collapse, and greedy decoding.

The dynamic programs run over the blank-augmented label sequence
(blank, l1, blank, l2, ..., blank) entirely in the log domain;
``-inf`` represents zero probability. All arithmetic is float64.

The path probability mass of a label sequence is the sum over every
frame-level path whose collapse (merge adjacent duplicates, then drop
blanks) equals that sequence; the loss is its negative natural log.
``brute_force_ctc`` recomputes the same mass by path enumeration in the
linear domain and exists as an independent test oracle.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np

from .containers import LATTICE_MAGIC, read_matrix, write_matrix

NEG_INF = float("-inf")

_ROW_SUM_TOL = 1e-6


class InvalidInputError(ValueError):
    """Raised for malformed lattices, paths, or label sequences."""


class EnumerationSizeError(ValueError):
    """Raised when brute-force enumeration would exceed its guard."""


@dataclass(frozen=True)
class LogPosteriorLattice:
    """T x V per-frame log posteriors with a designated blank token.

    Rows must be normalized: exp(values[t]) sums to 1 within 1e-6.
    Entries are finite or -inf; NaN is rejected. The value matrix is
    frozen read-only, so lattices are safe to share across threads.
    """

    values: np.ndarray
    blank_id: int

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise InvalidInputError(f"lattice must be 2-D, got shape {values.shape}")
        frames, vocab = values.shape
        if frames < 1:
            raise InvalidInputError("lattice needs at least one frame")
        if vocab < 2:
            raise InvalidInputError("lattice needs at least two output tokens")
        if not 0 <= self.blank_id < vocab:
            raise InvalidInputError(f"blank_id {self.blank_id} out of range [0, {vocab})")
        if np.isnan(values).any():
            raise InvalidInputError("lattice contains NaN")
        if np.isposinf(values).any():
            raise InvalidInputError("lattice contains +inf")
        row_sums = np.exp(values).sum(axis=1)
        if np.max(np.abs(row_sums - 1.0)) > _ROW_SUM_TOL:
            worst = int(np.argmax(np.abs(row_sums - 1.0)))
            raise InvalidInputError(
                f"row {worst} is not normalized (linear sum {row_sums[worst]:.9f})"
            )
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def vocab_size(self) -> int:
        return self.values.shape[1]

    @classmethod
    def from_probs(cls, probs: np.ndarray, blank_id: int) -> "LogPosteriorLattice":
        probs = np.asarray(probs, dtype=np.float64)
        with np.errstate(divide="ignore"):
            return cls(np.log(probs), blank_id)

    @classmethod
    def from_logits(cls, logits: np.ndarray, blank_id: int) -> "LogPosteriorLattice":
        return cls(log_softmax(np.asarray(logits, dtype=np.float64)), blank_id)


@dataclass(frozen=True)
class CtcResult:
    """Loss in nats plus, when requested, the gradient w.r.t. logits.

    ``infeasible`` tags label sequences no path of the given length can
    produce (or that carry zero probability mass); the loss is then +inf
    and the gradient is None, so batch loops can skip with a warning
    instead of crashing.
    """

    loss: float
    grad: np.ndarray | None = None
    infeasible: bool = False


def log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def collapse(path: Sequence[int], blank_id: int, vocab_size: int | None = None) -> list[int]:
    """Merge adjacent duplicate tokens, then remove blanks."""
    out: list[int] = []
    prev = None
    for tok in path:
        tok = int(tok)
        if tok < 0 or (vocab_size is not None and tok >= vocab_size):
            raise InvalidInputError(f"path token {tok} out of range")
        if tok != prev:
            if tok != blank_id:
                out.append(tok)
            prev = tok
    return out


def min_frames(labels: Sequence[int]) -> int:
    """Smallest frame count that can emit ``labels`` (repeats need a blank between)."""
    repeats = sum(1 for a, b in zip(labels, labels[1:]) if a == b)
    return len(labels) + repeats


def _check_labels(labels: Sequence[int], lattice: LogPosteriorLattice) -> list[int]:
    checked = []
    for tok in labels:
        tok = int(tok)
        if not 0 <= tok < lattice.vocab_size:
            raise InvalidInputError(f"label token {tok} out of range [0, {lattice.vocab_size})")
        if tok == lattice.blank_id:
            raise InvalidInputError("label sequence must not contain the blank token")
        checked.append(tok)
    return checked


def _augment(labels: Sequence[int], blank_id: int) -> np.ndarray:
    aug = np.full(2 * len(labels) + 1, blank_id, dtype=np.int64)
    aug[1::2] = labels
    return aug


def ctc_loss(
    lattice: LogPosteriorLattice,
    labels: Sequence[int],
    want_grad: bool = False,
) -> CtcResult:
    """Exact CTC loss, optionally with the gradient w.r.t. logits.

    The gradient assumes the lattice rows came from a normalized
    exponential map of logits; each gradient row then sums to zero.
    """
    labels = _check_labels(labels, lattice)
    T = lattice.frames
    if min_frames(labels) > T:
        return CtcResult(loss=float("inf"), grad=None, infeasible=True)

    aug = _augment(labels, lattice.blank_id)
    S = aug.shape[0]
    lat = lattice.values
    emit = lat[:, aug]  # (T, S) log posterior of each augmented state per frame

    # skip transition s-2 -> s is legal when state s is a label differing
    # from the label two states back
    skip_ok = np.zeros(S, dtype=bool)
    if S > 2:
        skip_ok[2:] = (aug[2:] != lattice.blank_id) & (aug[2:] != aug[:-2])

    log_alpha = np.full((T, S), NEG_INF)
    log_alpha[0, 0] = emit[0, 0]
    if S > 1:
        log_alpha[0, 1] = emit[0, 1]
    for t in range(1, T):
        prev = log_alpha[t - 1]
        acc = prev.copy()
        acc[1:] = np.logaddexp(acc[1:], prev[:-1])
        if S > 2:
            acc[2:] = np.where(
                skip_ok[2:], np.logaddexp(acc[2:], prev[:-2]), acc[2:]
            )
        log_alpha[t] = acc + emit[t]

    if S > 1:
        log_p = np.logaddexp(log_alpha[T - 1, S - 1], log_alpha[T - 1, S - 2])
    else:
        log_p = log_alpha[T - 1, S - 1]

    if log_p == NEG_INF:
        return CtcResult(loss=float("inf"), grad=None, infeasible=True)

    loss = -float(log_p)
    if not want_grad:
        return CtcResult(loss=loss)

    # beta excludes the emission at its own frame, so alpha + beta is the
    # full mass of paths occupying a state at a frame
    log_beta = np.full((T, S), NEG_INF)
    log_beta[T - 1, S - 1] = 0.0
    if S > 1:
        log_beta[T - 1, S - 2] = 0.0
    for t in range(T - 2, -1, -1):
        nxt = log_beta[t + 1] + emit[t + 1]
        acc = nxt.copy()
        acc[:-1] = np.logaddexp(acc[:-1], nxt[1:])
        if S > 2:
            acc[:-2] = np.where(
                skip_ok[2:], np.logaddexp(acc[:-2], nxt[2:]), acc[:-2]
            )
        log_beta[t] = acc

    occupancy = np.exp(log_alpha + log_beta - log_p)  # (T, S)
    grad = np.exp(lat).copy()
    for s in range(S):
        grad[:, aug[s]] -= occupancy[:, s]
    return CtcResult(loss=loss, grad=grad)


@lru_cache(maxsize=4096)
def _paths_matching(T: int, V: int, blank_id: int, labels: tuple[int, ...]) -> np.ndarray:
    """Indices of the paths in lexicographic V^T order whose collapse equals ``labels``."""
    n = V**T
    powers = V ** np.arange(T - 1, -1, -1, dtype=np.int64)
    idx = np.arange(n, dtype=np.int64)
    paths = (idx[:, None] // powers[None, :]) % V
    want = list(labels)
    matches = [i for i in range(n) if collapse(paths[i], blank_id) == want]
    return np.asarray(matches, dtype=np.int64)


def brute_force_ctc(lattice: LogPosteriorLattice, labels: Sequence[int]) -> float:
    """Total linear-domain probability of ``labels`` by full path enumeration.

    Exact at small sizes and independent of the forward-backward code;
    refuses instances where V^T exceeds 1e7.
    """
    labels = _check_labels(labels, lattice)
    T, V = lattice.frames, lattice.vocab_size
    if V**T > 10**7:
        raise EnumerationSizeError(f"V^T = {V}**{T} exceeds the enumeration guard")
    matches = _paths_matching(T, V, lattice.blank_id, tuple(labels))
    if matches.size == 0:
        return 0.0
    powers = V ** np.arange(T - 1, -1, -1, dtype=np.int64)
    paths = (matches[:, None] // powers[None, :]) % V
    probs = np.exp(lattice.values)
    per_path = probs[np.arange(T)[None, :], paths].prod(axis=1)
    return float(per_path.sum())


def greedy_decode(lattice: LogPosteriorLattice) -> tuple[list[int], list[int]]:
    """Per-frame argmax alignment and its collapsed label sequence."""
    alignment = [int(t) for t in np.argmax(lattice.values, axis=1)]
    return alignment, collapse(alignment, lattice.blank_id)


def save_lattice(path: str | Path, lattice: LogPosteriorLattice) -> None:
    write_matrix(path, lattice.values, LATTICE_MAGIC, aux=lattice.blank_id)


def load_lattice(path: str | Path) -> LogPosteriorLattice:
    values, blank_id = read_matrix(path, LATTICE_MAGIC)
    return LogPosteriorLattice(values, blank_id)


def lattice_to_csv(lattice: LogPosteriorLattice) -> str:
    """Debug CSV form: header ``t,v0,...,v{V-1}``, one row per frame."""
    buf = io.StringIO()
    writer = csv.writer(buf)
    writer.writerow(["t"] + [f"v{v}" for v in range(lattice.vocab_size)])
    for t in range(lattice.frames):
        writer.writerow([t] + [repr(float(x)) for x in lattice.values[t]])
    return buf.getvalue()


def lattice_from_csv(text: str, blank_id: int) -> LogPosteriorLattice:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if not header or header[0] != "t":
        raise InvalidInputError("lattice CSV must start with a 't,v0,...' header")
    rows = [[float(x) for x in row[1:]] for row in reader if row]
    return LogPosteriorLattice(np.asarray(rows, dtype=np.float64), blank_id)
