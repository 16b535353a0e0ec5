"""Deterministic synthetic corpora of character-compositional utterances.

Every character gets a fixed random unit prototype vector (drawn once
per seed); a word's features are its characters' prototypes, each
repeated for a sampled duration, with a space prototype between words
and i.i.d. Gaussian noise on top. Because features compose from
characters, a character-level model can in principle read out words it
never saw, which is what makes rare-word and hot-word recovery testable
at desk scale.

Rare words are excluded from the random draw and instead injected an
exact, configured number of times, so their training frequency is
controlled. Hot words never appear in training; the test split carries
dedicated utterances for them and for each rare word.
"""

from __future__ import annotations

import dataclasses
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .containers import FEATURE_MAGIC, read_matrix, write_matrix
from .tokenizer import normalize_word

CORPUS_FORMAT = "hybridctc-corpus"
CORPUS_VERSION = 1

# Out-of-the-box lexicon for the CLI demo: 60 words, the last 12 rare.
DEFAULT_LEXICON = (
    "play", "music", "call", "home", "stop", "next", "song", "artist",
    "volume", "up", "down", "pause", "resume", "what", "time", "is",
    "it", "weather", "today", "tomorrow", "set", "alarm", "for", "ten",
    "nine", "remind", "me", "to", "buy", "milk", "open", "mail",
    "send", "text", "mom", "dad", "find", "my", "phone", "turn",
    "on", "off", "lights", "news", "sports", "take", "a", "note",
    "repeat", "answer", "skip", "this",
    "zanzibar", "quixote", "vermouth", "glissando", "obsidian", "farrago",
    "kumquat", "zephyr", "bandolier", "tamarind", "yurt", "grotto",
)
DEFAULT_RARE_WORDS = DEFAULT_LEXICON[-12:]
DEFAULT_HOTWORDS = ("marzipan",)


@dataclass(frozen=True)
class CorpusConfig:
    lexicon: tuple[str, ...]
    rare_words: tuple[str, ...] = ()
    hotwords: tuple[str, ...] = ()
    prototype_dim: int = 8
    frames_per_char: tuple[int, int] = (3, 5)
    noise_sigma: float = 0.2
    words_per_utterance: tuple[int, int] = (2, 5)
    n_train: int = 300
    n_test: int = 60
    rare_train_occurrences: int = 2
    rare_test_occurrences: int = 2
    hotword_test_occurrences: int = 4
    silence_pad_frames: tuple[int, int] = (0, 0)
    homophones: tuple[tuple[str, str], ...] = ()
    seed: int = 0

    def __post_init__(self):
        lexicon = tuple(normalize_word(w) for w in self.lexicon)
        rare = tuple(normalize_word(w) for w in self.rare_words)
        hot = tuple(normalize_word(w) for w in self.hotwords)
        object.__setattr__(self, "lexicon", lexicon)
        object.__setattr__(self, "rare_words", rare)
        object.__setattr__(self, "hotwords", hot)
        if not lexicon:
            raise ValueError("lexicon must not be empty")
        if len(set(lexicon)) != len(lexicon):
            raise ValueError("lexicon contains duplicates")
        missing = [w for w in rare if w not in lexicon]
        if missing:
            raise ValueError(f"rare words not in lexicon: {missing}")
        clash = [w for w in hot if w in lexicon]
        if clash:
            raise ValueError(f"hot words must not be in the lexicon: {clash}")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.prototype_dim < 1:
            raise ValueError("prototype_dim must be >= 1")
        for name in ("frames_per_char", "words_per_utterance", "silence_pad_frames"):
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0 or (name != "silence_pad_frames" and lo < 1):
                raise ValueError(f"bad {name} range ({lo}, {hi})")


@dataclass(frozen=True)
class Utterance:
    utt_id: str
    features: np.ndarray  # (T, d) float64
    words: tuple[str, ...]
    silence_padded: bool = False

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        if features.ndim != 2 or features.shape[0] < 1:
            raise ValueError("features must be a non-empty (T, d) matrix")
        features = features.copy()
        features.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "words", tuple(self.words))


@dataclass(frozen=True)
class Corpus:
    config: CorpusConfig
    train: tuple[Utterance, ...] = field(default=())
    test: tuple[Utterance, ...] = field(default=())


def character_inventory(config: CorpusConfig) -> list[str]:
    chars = {ch for w in config.lexicon + config.hotwords for ch in w}
    chars.add(" ")
    return sorted(chars)


def _draw_prototypes(config: CorpusConfig, rng) -> dict[str, np.ndarray]:
    protos = {}
    for ch in character_inventory(config):
        v = rng.normal(size=config.prototype_dim)
        protos[ch] = v / np.linalg.norm(v)
    return protos


def _render(words, protos, config: CorpusConfig, rng) -> tuple[np.ndarray, bool]:
    spoken = dict(config.homophones)
    lo, hi = config.frames_per_char
    rows = []
    for j, word in enumerate(words):
        if j:
            rows.append(np.repeat(protos[" "][None, :], rng.integers(lo, hi + 1), axis=0))
        for ch in spoken.get(word, word):
            rows.append(np.repeat(protos[ch][None, :], rng.integers(lo, hi + 1), axis=0))
    feats = np.concatenate(rows, axis=0)
    s_lo, s_hi = config.silence_pad_frames
    padded = s_hi > 0
    if padded:
        pre = int(rng.integers(s_lo, s_hi + 1))
        post = int(rng.integers(s_lo, s_hi + 1))
        zeros = np.zeros((1, config.prototype_dim))
        feats = np.concatenate([np.repeat(zeros, pre, 0), feats, np.repeat(zeros, post, 0)])
    if config.noise_sigma > 0:
        feats = feats + rng.normal(0.0, config.noise_sigma, feats.shape)
    return feats, padded


def generate(config: CorpusConfig) -> Corpus:
    """Synthesize train and test splits; bit-identical under one seed."""
    rng = np.random.default_rng(config.seed)
    protos = _draw_prototypes(config, rng)
    common = [w for w in config.lexicon if w not in config.rare_words]
    if not common:
        raise ValueError("lexicon has no common words left after rare-word removal")
    lo, hi = config.words_per_utterance

    def sample_words():
        k = int(rng.integers(lo, hi + 1))
        return [str(w) for w in rng.choice(common, size=k)]

    train_words = [sample_words() for _ in range(config.n_train)]
    for rare in config.rare_words:
        for _ in range(config.rare_train_occurrences):
            utt = int(rng.integers(0, config.n_train))
            pos = int(rng.integers(0, len(train_words[utt]) + 1))
            train_words[utt].insert(pos, rare)

    test_words = [sample_words() for _ in range(config.n_test)]
    for special, copies in (
        *((w, config.rare_test_occurrences) for w in config.rare_words),
        *((w, config.hotword_test_occurrences) for w in config.hotwords),
    ):
        for _ in range(copies):
            words = sample_words()
            pos = int(rng.integers(0, len(words) + 1))
            words.insert(pos, special)
            test_words.append(words)

    def build(split, transcripts):
        utts = []
        for i, words in enumerate(transcripts):
            feats, padded = _render(words, protos, config, rng)
            utts.append(Utterance(f"{split}-{i:05d}", feats, tuple(words), padded))
        return tuple(utts)

    return Corpus(config=config, train=build("train", train_words),
                  test=build("test", test_words))


def train_lexicon(corpus: Corpus) -> list[str]:
    """Unique words seen in the training transcripts, sorted."""
    return sorted({w for utt in corpus.train for w in utt.words})


def word_frequencies(utterances: Iterable[Utterance]) -> Counter:
    counts: Counter[str] = Counter()
    for utt in utterances:
        counts.update(utt.words)
    return counts


def save_corpus(corpus: Corpus, out_dir: str | Path) -> None:
    out_dir = Path(out_dir)
    (out_dir / "features").mkdir(parents=True, exist_ok=True)
    header = {
        "format": CORPUS_FORMAT,
        "version": CORPUS_VERSION,
        "config": dataclasses.asdict(corpus.config),
    }
    (out_dir / "config.json").write_text(json.dumps(header, indent=1, sort_keys=True))
    for split in ("train", "test"):
        lines = []
        for utt in getattr(corpus, split):
            rel = f"features/{utt.utt_id}.fea"
            write_matrix(out_dir / rel, utt.features, FEATURE_MAGIC)
            lines.append(json.dumps({
                "id": utt.utt_id,
                "words": list(utt.words),
                "features": rel,
                "silence_padded": utt.silence_padded,
            }, sort_keys=True))
        (out_dir / f"{split}.jsonl").write_text("".join(l + "\n" for l in lines))


def _config_from_dict(raw: dict) -> CorpusConfig:
    kwargs = dict(raw)
    for name in ("lexicon", "rare_words", "hotwords"):
        kwargs[name] = tuple(kwargs.get(name, ()))
    for name in ("frames_per_char", "words_per_utterance", "silence_pad_frames"):
        if name in kwargs:
            kwargs[name] = tuple(kwargs[name])
    if "homophones" in kwargs:
        kwargs["homophones"] = tuple(tuple(p) for p in kwargs["homophones"])
    return CorpusConfig(**kwargs)


def load_corpus(in_dir: str | Path) -> Corpus:
    in_dir = Path(in_dir)
    header = json.loads((in_dir / "config.json").read_text())
    if header.get("format") != CORPUS_FORMAT:
        raise ValueError(f"{in_dir} is not a corpus directory")
    if header.get("version") != CORPUS_VERSION:
        raise ValueError(f"unsupported corpus version {header.get('version')!r}")
    config = _config_from_dict(header["config"])
    splits = {}
    for split in ("train", "test"):
        utts = []
        text = (in_dir / f"{split}.jsonl").read_text()
        for line in text.splitlines():
            if not line.strip():
                continue
            entry = json.loads(line)
            feats, _ = read_matrix(in_dir / entry["features"], FEATURE_MAGIC)
            utts.append(Utterance(entry["id"], feats, tuple(entry["words"]),
                                  entry.get("silence_padded", False)))
        splits[split] = tuple(utts)
    return Corpus(config=config, train=splits["train"], test=splits["test"])
