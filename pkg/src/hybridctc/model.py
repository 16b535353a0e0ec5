"""Shared-stack recurrent model with word and character output heads.

A stack of LSTM layers is shared by two heads, each a single LSTM layer
plus a linear projection whose log-softmax output forms a posterior
lattice. The character head optionally applies a row convolution (a
learned linear mix of neighboring hidden vectors) before its
projection. Both heads see the same shared activations, so their
lattices always have the same frame count.

Everything runs in float64 numpy with hand-written backpropagation, so
forward passes and training are bit-reproducible under a fixed seed and
finite-difference checks of every parameter gradient are meaningful.
Training is plain per-utterance stochastic gradient descent with global
gradient-norm clipping; parameters whose names are in ``model.frozen``
are never updated, which is how the second training stage keeps the
shared stack bit-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import ctc
from .corpus import Utterance
from .tokenizer import CharSet, WordVocab, encode_chars

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hybridctc-checkpoint"
CHECKPOINT_VERSION = 1


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int
    word_vocab_size: int
    char_vocab_size: int
    hidden_dim: int = 32
    num_shared_layers: int = 2
    head_hidden_dim: int = 32
    row_conv_context: int = 0  # 0 = char head has no row convolution
    frame_stack: int = 4
    frame_shift: int = 2
    seed: int = 0
    word_blank_id: int = 0
    char_blank_id: int = 0

    def __post_init__(self):
        for name in ("input_dim", "word_vocab_size", "char_vocab_size", "hidden_dim",
                     "num_shared_layers", "head_hidden_dim", "frame_stack", "frame_shift"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.row_conv_context < 0:
            raise ValueError("row_conv_context must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 5
    clip_norm: float = 5.0
    shuffle: bool = True
    seed: int = 0
    log_every: int = 0


@dataclass(frozen=True)
class RowConvolution:
    """Context mixing weights: one H x H matrix per offset in [-C, C]."""

    weights: np.ndarray  # (2C + 1, H, H)

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 3 or w.shape[0] % 2 != 1 or w.shape[1] != w.shape[2]:
            raise ValueError(f"row convolution weights must be (2C+1, H, H), got {w.shape}")
        object.__setattr__(self, "weights", w)

    @property
    def context(self) -> int:
        return (self.weights.shape[0] - 1) // 2


def row_convolution(h: np.ndarray, rc: RowConvolution | np.ndarray) -> np.ndarray:
    """Mix each hidden vector with its neighbors; zero padding at the edges."""
    weights = rc.weights if isinstance(rc, RowConvolution) else np.asarray(rc)
    h = np.asarray(h, dtype=np.float64)
    if h.ndim != 2 or h.shape[0] < 1:
        raise ValueError("hidden sequence must be a non-empty (T, H) matrix")
    context = (weights.shape[0] - 1) // 2
    T = h.shape[0]
    out = np.zeros_like(h)
    for c in range(-context, context + 1):
        w_c = weights[c + context]
        if c >= 0:
            out[: T - c if c else T] += h[c:] @ w_c
        else:
            out[-c:] += h[: T + c] @ w_c
    return out


def _row_conv_backward(h, weights, d_out):
    context = (weights.shape[0] - 1) // 2
    T = h.shape[0]
    d_w = np.zeros_like(weights)
    d_h = np.zeros_like(h)
    for c in range(-context, context + 1):
        w_c = weights[c + context]
        if c >= 0:
            top = T - c if c else T
            d_w[c + context] = h[c:].T @ d_out[:top]
            d_h[c:] += d_out[:top] @ w_c.T
        else:
            d_w[c + context] = h[: T + c].T @ d_out[-c:]
            d_h[: T + c] += d_out[-c:] @ w_c.T
    return d_w, d_h


def stacked_length(raw_frames: int, frame_stack: int, frame_shift: int) -> int:
    windows = raw_frames - frame_stack + 1
    if windows < 1:
        return 0
    return -(-windows // frame_shift)


def stack_frames(features: np.ndarray, frame_stack: int, frame_shift: int) -> np.ndarray:
    """Concatenate ``frame_stack`` consecutive frames, stepping by ``frame_shift``."""
    features = np.asarray(features, dtype=np.float64)
    n = stacked_length(features.shape[0], frame_stack, frame_shift)
    if n < 1:
        raise ValueError(
            f"{features.shape[0]} raw frames cannot fill a {frame_stack}-frame window"
        )
    return np.stack(
        [features[i * frame_shift : i * frame_shift + frame_stack].ravel() for i in range(n)]
    )


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def _lstm_forward(x, W, U, b):
    T = x.shape[0]
    H = U.shape[0]
    gates_in = x @ W + b  # (T, 4H)
    gates = np.empty((T, 4 * H))  # sigmoid i|f|o columns, tanh g columns
    C = np.empty((T, H))
    TC = np.empty((T, H))
    Hs = np.empty((T, H))
    h = np.zeros(H)
    c = np.zeros(H)
    for t in range(T):
        z = gates_in[t] + h @ U
        z[: 3 * H] = _sigmoid(z[: 3 * H])
        z[3 * H :] = np.tanh(z[3 * H :])
        c = z[H : 2 * H] * c + z[:H] * z[3 * H :]
        tc = np.tanh(c)
        h = z[2 * H : 3 * H] * tc
        gates[t], C[t], TC[t], Hs[t] = z, c, tc, h
    return Hs, (x, gates, C, TC, Hs)


def _lstm_backward(cache, W, U, d_h_out):
    x, gates, C, TC, Hs = cache
    T, H = Hs.shape
    I = gates[:, :H]
    F = gates[:, H : 2 * H]
    O = gates[:, 2 * H : 3 * H]
    G = gates[:, 3 * H :]
    d_Z = np.empty((T, 4 * H))  # pre-activation gate gradients
    d_h_next = np.zeros(H)
    d_c_next = np.zeros(H)
    for t in range(T - 1, -1, -1):
        c_prev = C[t - 1] if t > 0 else 0.0
        d_h = d_h_out[t] + d_h_next
        d_c = d_c_next + d_h * O[t] * (1.0 - TC[t] ** 2)
        d_Z[t, :H] = (d_c * G[t]) * I[t] * (1.0 - I[t])
        d_Z[t, H : 2 * H] = (d_c * c_prev) * F[t] * (1.0 - F[t])
        d_Z[t, 2 * H : 3 * H] = (d_h * TC[t]) * O[t] * (1.0 - O[t])
        d_Z[t, 3 * H :] = (d_c * I[t]) * (1.0 - G[t] ** 2)
        d_h_next = d_Z[t] @ U.T
        d_c_next = d_c * F[t]
    h_prev = np.vstack([np.zeros((1, H)), Hs[:-1]])
    return x.T @ d_Z, h_prev.T @ d_Z, d_Z.sum(axis=0), d_Z @ W.T


class HybridModel:
    """Parameter container plus forward/backward over the two-head stack."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray],
                 frozen: Sequence[str] = ()):
        self.config = config
        self.params = params
        self.frozen = set(frozen)

    @classmethod
    def initialize(cls, config: ModelConfig) -> "HybridModel":
        rng = np.random.default_rng(config.seed)
        params: dict[str, np.ndarray] = {}

        def lstm(prefix, in_dim, hid):
            params[f"{prefix}.W"] = rng.uniform(-1, 1, (in_dim, 4 * hid)) / np.sqrt(in_dim)
            params[f"{prefix}.U"] = rng.uniform(-1, 1, (hid, 4 * hid)) / np.sqrt(hid)
            b = np.zeros(4 * hid)
            b[hid : 2 * hid] = 1.0  # open forget gates at start
            params[f"{prefix}.b"] = b

        def linear(prefix, in_dim, out_dim):
            params[f"{prefix}.W"] = rng.uniform(-1, 1, (in_dim, out_dim)) / np.sqrt(in_dim)
            params[f"{prefix}.b"] = np.zeros(out_dim)

        dim = config.input_dim * config.frame_stack
        for i in range(config.num_shared_layers):
            lstm(f"shared.{i}", dim, config.hidden_dim)
            dim = config.hidden_dim
        lstm("word.lstm", dim, config.head_hidden_dim)
        linear("word.out", config.head_hidden_dim, config.word_vocab_size)
        lstm("char.lstm", dim, config.head_hidden_dim)
        if config.row_conv_context > 0:
            c = config.row_conv_context
            w = np.zeros((2 * c + 1, config.head_hidden_dim, config.head_hidden_dim))
            w[c] = np.eye(config.head_hidden_dim)
            params["char.rowconv.W"] = w
        linear("char.out", config.head_hidden_dim, config.char_vocab_size)
        return cls(config, params)

    def shared_param_names(self) -> list[str]:
        return sorted(n for n in self.params if n.startswith("shared."))

    def word_head_param_names(self) -> list[str]:
        return sorted(n for n in self.params if n.startswith("word."))

    def char_head_param_names(self) -> list[str]:
        return sorted(n for n in self.params if n.startswith("char."))

    def _shared_forward(self, features):
        features = np.asarray(features, dtype=np.float64)
        if features.ndim != 2 or features.shape[1] != self.config.input_dim:
            raise ValueError(
                f"expected (T, {self.config.input_dim}) features, got {features.shape}"
            )
        h = stack_frames(features, self.config.frame_stack, self.config.frame_shift)
        caches = []
        for i in range(self.config.num_shared_layers):
            p = f"shared.{i}"
            h, cache = _lstm_forward(h, self.params[f"{p}.W"], self.params[f"{p}.U"],
                                     self.params[f"{p}.b"])
            caches.append(cache)
        return h, caches

    def _head_forward(self, h_shared, head: str):
        h, lstm_cache = _lstm_forward(
            h_shared, self.params[f"{head}.lstm.W"], self.params[f"{head}.lstm.U"],
            self.params[f"{head}.lstm.b"]
        )
        mixed = h
        if head == "char" and "char.rowconv.W" in self.params:
            mixed = row_convolution(h, self.params["char.rowconv.W"])
        logits = mixed @ self.params[f"{head}.out.W"] + self.params[f"{head}.out.b"]
        return logits, (lstm_cache, h)

    def _head_backward(self, head: str, caches, d_logits, grads):
        lstm_cache, h = caches
        mixed = h
        if head == "char" and "char.rowconv.W" in self.params:
            mixed = row_convolution(h, self.params["char.rowconv.W"])
        grads[f"{head}.out.W"] = mixed.T @ d_logits
        grads[f"{head}.out.b"] = d_logits.sum(axis=0)
        d_mixed = d_logits @ self.params[f"{head}.out.W"].T
        if head == "char" and "char.rowconv.W" in self.params:
            d_w, d_h = _row_conv_backward(h, self.params["char.rowconv.W"], d_mixed)
            grads["char.rowconv.W"] = d_w
        else:
            d_h = d_mixed
        d_W, d_U, d_b, d_x = _lstm_backward(
            lstm_cache, self.params[f"{head}.lstm.W"], self.params[f"{head}.lstm.U"], d_h
        )
        grads[f"{head}.lstm.W"] = d_W
        grads[f"{head}.lstm.U"] = d_U
        grads[f"{head}.lstm.b"] = d_b
        return d_x

    def forward(self, features, head: str = "both"):
        """Per-head posterior lattices for one utterance.

        Returns a single lattice for ``head`` in {"word", "char"} or a
        ``(word, char)`` pair for "both".
        """
        h_shared, _ = self._shared_forward(features)
        out = []
        heads = ("word", "char") if head == "both" else (head,)
        for name in heads:
            logits, _ = self._head_forward(h_shared, name)
            blank = self.config.word_blank_id if name == "word" else self.config.char_blank_id
            out.append(ctc.LogPosteriorLattice.from_logits(logits, blank))
        return tuple(out) if head == "both" else out[0]

    def loss_and_gradients(self, features, word_labels=None, char_labels=None):
        """CTC losses and exact parameter gradients for the active heads.

        Raises ValueError on labels infeasible at the stacked frame
        count; training loops pre-filter those.
        """
        if word_labels is None and char_labels is None:
            raise ValueError("at least one head needs labels")
        h_shared, shared_caches = self._shared_forward(features)
        grads: dict[str, np.ndarray] = {}
        losses: dict[str, float] = {}
        d_top = np.zeros_like(h_shared)
        for head, labels, blank in (
            ("word", word_labels, self.config.word_blank_id),
            ("char", char_labels, self.config.char_blank_id),
        ):
            if labels is None:
                continue
            logits, caches = self._head_forward(h_shared, head)
            lattice = ctc.LogPosteriorLattice.from_logits(logits, blank)
            result = ctc.ctc_loss(lattice, labels, want_grad=True)
            if result.infeasible:
                raise ValueError(
                    f"{head} labels of length {len(labels)} are infeasible "
                    f"at {lattice.frames} frames"
                )
            losses[head] = result.loss
            d_top += self._head_backward(head, caches, result.grad, grads)
        for i in range(self.config.num_shared_layers - 1, -1, -1):
            p = f"shared.{i}"
            d_W, d_U, d_b, d_top = _lstm_backward(
                shared_caches[i], self.params[f"{p}.W"], self.params[f"{p}.U"], d_top
            )
            grads[f"{p}.W"] = d_W
            grads[f"{p}.U"] = d_U
            grads[f"{p}.b"] = d_b
        losses["total"] = sum(v for k, v in losses.items())
        return losses, grads

    def checksum(self, names: Sequence[str] | None = None) -> str:
        digest = hashlib.sha256()
        for name in sorted(names if names is not None else self.params):
            digest.update(name.encode())
            digest.update(np.ascontiguousarray(self.params[name]).tobytes())
        return digest.hexdigest()


def freeze_shared(model: HybridModel) -> HybridModel:
    model.frozen.update(model.shared_param_names())
    return model


def unfreeze_shared(model: HybridModel) -> HybridModel:
    model.frozen.difference_update(model.shared_param_names())
    return model


def _apply_sgd(model: HybridModel, grads: dict[str, np.ndarray], cfg: TrainConfig) -> None:
    live = [(n, g) for n, g in grads.items() if n not in model.frozen]
    if not live:
        return
    norm = np.sqrt(sum(float(np.sum(g * g)) for _, g in live))
    scale = cfg.clip_norm / norm if cfg.clip_norm > 0 and norm > cfg.clip_norm else 1.0
    for name, g in live:
        model.params[name] -= cfg.learning_rate * scale * g


def word_labels_for(utt: Utterance, vocab: WordVocab) -> list[int]:
    ids = vocab.encode(utt.words)
    if utt.silence_padded:
        ids = [vocab.silence_id] + ids + [vocab.silence_id]
    return ids


def char_labels_for(utt: Utterance, charset: CharSet) -> list[int]:
    return encode_chars(utt.words, charset)


def _train(model, utterances, labels_fn, head, cfg):
    curve: list[tuple[int, float]] = []
    rng = np.random.default_rng(cfg.seed)
    step = 0
    skipped = 0
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(utterances)) if cfg.shuffle else np.arange(len(utterances))
        for idx in order:
            utt = utterances[int(idx)]
            labels = labels_fn(utt)
            frames = stacked_length(
                utt.features.shape[0], model.config.frame_stack, model.config.frame_shift
            )
            if frames < 1 or ctc.min_frames(labels) > frames:
                skipped += 1
                logger.warning("skipping %s: %d labels infeasible at %d frames",
                               utt.utt_id, len(labels), frames)
                continue
            kwargs = {"word_labels": labels} if head == "word" else {"char_labels": labels}
            losses, grads = model.loss_and_gradients(utt.features, **kwargs)
            if not np.isfinite(losses["total"]):
                raise TrainingDivergedError(
                    f"non-finite loss at step {step} (utterance {utt.utt_id})"
                )
            _apply_sgd(model, grads, cfg)
            curve.append((step, losses["total"]))
            if cfg.log_every and step % cfg.log_every == 0:
                logger.info("%s stage step %d loss %.4f", head, step, losses["total"])
            step += 1
    if skipped:
        logger.warning("%s stage skipped %d infeasible utterances", head, skipped)
    return curve


def train_word_stage(model: HybridModel, utterances: Sequence[Utterance],
                     vocab: WordVocab, cfg: TrainConfig) -> list[tuple[int, float]]:
    """First stage: every parameter trains against word-level CTC loss."""
    return _train(model, utterances, lambda u: word_labels_for(u, vocab), "word", cfg)


def train_char_stage(model: HybridModel, utterances: Sequence[Utterance],
                     charset: CharSet, cfg: TrainConfig) -> list[tuple[int, float]]:
    """Second stage: character-level CTC loss, shared stack frozen.

    The shared stack must already be frozen (see ``freeze_shared``);
    only character-head parameters receive updates.
    """
    missing = [n for n in model.shared_param_names() if n not in model.frozen]
    if missing:
        raise ValueError("shared stack must be frozen before the character stage")
    return _train(model, utterances, lambda u: char_labels_for(u, charset), "char", cfg)


def average_ctc_loss(model: HybridModel, utterances: Sequence[Utterance],
                     labels_fn: Callable[[Utterance], Sequence[int]], head: str) -> float:
    """Mean CTC loss over the feasible utterances of a held-out set."""
    total = 0.0
    n = 0
    for utt in utterances:
        lattice = model.forward(utt.features, head=head)
        result = ctc.ctc_loss(lattice, labels_fn(utt))
        if result.infeasible:
            continue
        total += result.loss
        n += 1
    if n == 0:
        raise ValueError("no feasible utterances to evaluate")
    return total / n


def save_checkpoint(path: str | Path, model: HybridModel, stage: str) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "stage": stage,
        "config": dataclasses.asdict(model.config),
        "frozen": sorted(model.frozen),
    }
    np.savez(path, __meta__=np.array(json.dumps(meta)), **model.params)


def load_checkpoint(path: str | Path) -> tuple[HybridModel, str]:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["__meta__"]))
        if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"{path} is not a supported checkpoint")
        params = {k: data[k].copy() for k in data.files if k != "__meta__"}
    config = ModelConfig(**meta["config"])
    model = HybridModel(config, params, frozen=meta["frozen"])
    return model, meta["stage"]


def save_loss_curve(path: str | Path, curve: Sequence[tuple[int, float]]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("step,loss\n")
        for step, loss in curve:
            fh.write(f"{step},{loss!r}\n")


def load_loss_curve(path: str | Path) -> list[tuple[int, float]]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [(int(s), float(l)) for s, l in (line.split(",") for line in lines[1:] if line)]
