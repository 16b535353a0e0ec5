"""Command-line pipeline: corpus, vocab, two training stages, decode, eval, report.

Every subcommand works inside one run directory (``--out-dir``), reads a
single JSON config file merged over built-in defaults, honors flag
overrides, and records each produced file with a sha256 in
``manifest.json``. Re-running a pipeline with the same seed reproduces
every artifact byte for byte.

Failures print a one-line JSON error record to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import sys
from pathlib import Path

from . import corpus as corpus_mod
from . import model as model_mod
from .hybrid import DecodeConfig, hybrid_decode, result_to_record, word_spans_from_lattice
from .lexicon import build_trie, constrained_decode, max_output_decode
from .metrics import (OovAttribution, oov_attributed_wer, recovery_rate_from_wers,
                      score_corpus)
from .report import ModeSummary, render_report
from .tokenizer import (build_charset_28, build_charset_83, build_word_vocab,
                        charset_from_json, charset_to_json, read_lexicon,
                        vocab_from_json, vocab_to_json, write_lexicon)

logger = logging.getLogger(__name__)

MODES = ("word-only", "char-max", "char-constrained", "hybrid")

DEFAULT_CONFIG = {
    "corpus": {
        "lexicon": list(corpus_mod.DEFAULT_LEXICON),
        "rare_words": list(corpus_mod.DEFAULT_RARE_WORDS),
        "hotwords": list(corpus_mod.DEFAULT_HOTWORDS),
        "prototype_dim": 8,
        "frames_per_char": [3, 5],
        "noise_sigma": 0.25,
        "words_per_utterance": [2, 5],
        "n_train": 300,
        "n_test": 50,
        "rare_train_occurrences": 2,
        "rare_test_occurrences": 2,
        "hotword_test_occurrences": 6,
        "seed": 0,
    },
    "vocab": {"min_count": 3, "charset": "cs28"},
    "model": {
        "hidden_dim": 32,
        "num_shared_layers": 2,
        "head_hidden_dim": 32,
        "row_conv_context": 0,
        "frame_stack": 4,
        "frame_shift": 2,
        "seed": 0,
    },
    "train_word": {"learning_rate": 0.12, "epochs": 6, "clip_norm": 5.0},
    "train_char": {"learning_rate": 0.12, "epochs": 4, "clip_norm": 5.0},
    "decode": {"mode": "hybrid", "beam_width": 64},
}


def load_config(path: str | None) -> dict:
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path:
        user = json.loads(Path(path).read_text(encoding="utf-8"))
        for section, values in user.items():
            if section not in config:
                raise ValueError(f"unknown config section {section!r}")
            config[section].update(values)
    return config


def _apply_overrides(config: dict, args) -> dict:
    if getattr(args, "seed", None) is not None:
        config["corpus"]["seed"] = args.seed
        config["model"]["seed"] = args.seed
    if getattr(args, "min_count", None) is not None:
        config["vocab"]["min_count"] = args.min_count
    if getattr(args, "charset", None) is not None:
        config["vocab"]["charset"] = args.charset
    if getattr(args, "row_conv_context", None) is not None:
        config["model"]["row_conv_context"] = args.row_conv_context
    if getattr(args, "mode", None) is not None:
        config["decode"]["mode"] = args.mode
    if getattr(args, "beam", None) is not None:
        config["decode"]["beam_width"] = args.beam
    return config


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _update_manifest(out_dir: Path, command: str, config: dict, artifacts: list[Path]) -> None:
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists():
        manifest = json.loads(manifest_path.read_text())
    else:
        manifest = {"format": "hybridctc-manifest", "version": 1,
                    "commands": [], "configs": {}, "artifacts": {}}
    manifest["commands"].append(command)
    manifest["configs"][command] = config
    for path in artifacts:
        rel = path.relative_to(out_dir).as_posix()
        manifest["artifacts"][rel] = _sha256(path)
    manifest_path.write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _files_under(root: Path) -> list[Path]:
    return sorted(p for p in root.rglob("*") if p.is_file())


def cmd_gen_corpus(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out_dir)
    corpus_dir = out_dir / "corpus"
    corpus_dir.mkdir(parents=True, exist_ok=True)
    cfg = corpus_mod._config_from_dict(config["corpus"])
    corpus = corpus_mod.generate(cfg)
    corpus_mod.save_corpus(corpus, corpus_dir)
    _update_manifest(out_dir, "gen-corpus", config, _files_under(corpus_dir))
    print(f"wrote corpus: {len(corpus.train)} train / {len(corpus.test)} test utterances")
    return 0


def cmd_build_vocab(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out_dir)
    corpus = corpus_mod.load_corpus(out_dir / "corpus")
    vocab = build_word_vocab((u.words for u in corpus.train), config["vocab"]["min_count"])
    lexicon = corpus_mod.train_lexicon(corpus)
    if config["vocab"]["charset"] == "cs83":
        charset = build_charset_83(lexicon)
    elif config["vocab"]["charset"] == "cs28":
        charset = build_charset_28()
    else:
        raise ValueError(f"unknown charset {config['vocab']['charset']!r}")
    (out_dir / "vocab.json").write_text(vocab_to_json(vocab))
    (out_dir / "charset.json").write_text(charset_to_json(charset))
    write_lexicon(out_dir / "lexicon.txt", lexicon)
    artifacts = [out_dir / "vocab.json", out_dir / "charset.json", out_dir / "lexicon.txt"]
    _update_manifest(out_dir, "build-vocab", config, artifacts)
    print(f"vocabulary: {vocab.size} word outputs ({len(vocab.word_to_id)} surface words), "
          f"charset {charset.variant} with {charset.size} units")
    return 0


def _load_artifacts(out_dir: Path):
    corpus = corpus_mod.load_corpus(out_dir / "corpus")
    vocab = vocab_from_json((out_dir / "vocab.json").read_text())
    charset = charset_from_json((out_dir / "charset.json").read_text())
    return corpus, vocab, charset


def cmd_train_word(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out_dir)
    corpus, vocab, charset = _load_artifacts(out_dir)
    model_cfg = model_mod.ModelConfig(
        input_dim=corpus.config.prototype_dim,
        word_vocab_size=vocab.size,
        char_vocab_size=charset.size,
        **config["model"],
    )
    model = model_mod.HybridModel.initialize(model_cfg)
    curve = model_mod.train_word_stage(
        model, corpus.train, vocab, model_mod.TrainConfig(**config["train_word"])
    )
    model_mod.save_checkpoint(out_dir / "word_model.npz", model, stage="word")
    model_mod.save_loss_curve(out_dir / "word_loss.csv", curve)
    artifacts = [out_dir / "word_model.npz", out_dir / "word_loss.csv"]
    _update_manifest(out_dir, "train-word", config, artifacts)
    print(f"word stage: {len(curve)} steps, final loss {curve[-1][1]:.4f}")
    return 0


def cmd_train_char(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out_dir)
    corpus, vocab, charset = _load_artifacts(out_dir)
    model, _ = model_mod.load_checkpoint(out_dir / "word_model.npz")
    model_mod.freeze_shared(model)
    curve = model_mod.train_char_stage(
        model, corpus.train, charset, model_mod.TrainConfig(**config["train_char"])
    )
    model_mod.save_checkpoint(out_dir / "hybrid_model.npz", model, stage="char")
    model_mod.save_loss_curve(out_dir / "char_loss.csv", curve)
    artifacts = [out_dir / "hybrid_model.npz", out_dir / "char_loss.csv"]
    _update_manifest(out_dir, "train-char", config, artifacts)
    print(f"char stage: {len(curve)} steps, final loss {curve[-1][1]:.4f}")
    return 0


def _load_model(out_dir: Path):
    for name in ("hybrid_model.npz", "word_model.npz"):
        path = out_dir / name
        if path.exists():
            model, _ = model_mod.load_checkpoint(path)
            return model
    raise FileNotFoundError(f"no checkpoint under {out_dir}; run train-word first")


def cmd_decode(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out_dir)
    mode = config["decode"]["mode"]
    if mode not in MODES:
        raise ValueError(f"unknown decode mode {mode!r}; choose from {MODES}")
    beam = config["decode"]["beam_width"]
    corpus, vocab, charset = _load_artifacts(out_dir)
    model = _load_model(out_dir)
    lexicon_path = Path(args.lexicon) if args.lexicon else out_dir / "lexicon.txt"
    trie = build_trie(read_lexicon(lexicon_path), charset)

    records = []
    for utt in corpus.test:
        if mode == "word-only":
            lattice = model.forward(utt.features, head="word")
            spans = word_spans_from_lattice(lattice, vocab)
            words = [s.word for s in spans]
            records.append(result_to_record(utt.utt_id, words, word_hyp=words))
        elif mode == "char-max":
            lattice = model.forward(utt.features, head="char")
            spans = max_output_decode(lattice, charset)
            words = [s.word for s in spans]
            records.append(result_to_record(utt.utt_id, words, char_hyp=words))
        elif mode == "char-constrained":
            lattice = model.forward(utt.features, head="char")
            result = constrained_decode(lattice, trie, beam)
            words = [s.word for s in result.word_spans]
            records.append(result_to_record(utt.utt_id, words, char_hyp=words))
        else:
            word_lat, char_lat = model.forward(utt.features, head="both")
            result = hybrid_decode(word_lat, char_lat, trie, vocab, charset,
                                   DecodeConfig(char_mode="constrained", beam_width=beam))
            records.append(result_to_record(
                utt.utt_id, result.words,
                word_hyp=[s.word for s in result.word_spans],
                char_hyp=None if result.char_spans is None
                else [s.word for s in result.char_spans],
                oov_events=result.oov_events,
            ))

    decode_dir = out_dir / "decode"
    decode_dir.mkdir(parents=True, exist_ok=True)
    path = decode_dir / f"{mode}.jsonl"
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in records))
    _update_manifest(out_dir, f"decode:{mode}", config, [path])
    print(f"decoded {len(records)} utterances in mode {mode} -> {path}")
    return 0


def cmd_add_hotwords(args) -> int:
    out_dir = Path(args.out_dir)
    base_path = Path(args.lexicon) if args.lexicon else out_dir / "lexicon.txt"
    words = list(args.words or [])
    if args.words_file:
        words.extend(read_lexicon(args.words_file))
    if not words:
        raise ValueError("no hot words given; use --words or --words-file")
    base = read_lexicon(base_path)
    merged = base + [w for w in words if w not in set(base)]
    target = Path(args.out) if args.out else out_dir / "lexicon-hot.txt"
    write_lexicon(target, merged)
    _update_manifest(out_dir, "add-hotwords", {"words": sorted(words)}, [target])
    print(f"lexicon {base_path} + {len(merged) - len(base)} new words -> {target}")
    return 0


def cmd_eval(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    out_dir = Path(args.out_dir)
    mode = config["decode"]["mode"]
    corpus, _, _ = _load_artifacts(out_dir)
    refs = {utt.utt_id: list(utt.words) for utt in corpus.test}
    decode_path = out_dir / "decode" / f"{mode}.jsonl"
    pairs = []
    for line in decode_path.read_text().splitlines():
        record = json.loads(line)
        pairs.append((record["id"], refs[record["id"]], record["final"]))
    report = score_corpus(pairs)

    payload = {
        "mode": mode,
        "wer": report.wer,
        "substitutions": report.substitutions,
        "insertions": report.insertions,
        "deletions": report.deletions,
        "reference_words": report.reference_words,
    }
    attribution: OovAttribution | None = None
    if any("<OOV>" in u.hypothesis for u in report.utterances) or mode == "word-only":
        attribution = oov_attributed_wer(report)
        payload["oov"] = {
            "baseline_wer": attribution.baseline.wer,
            "oracle_wer": attribution.oracle.wer,
            "contribution": attribution.contribution,
        }

    eval_dir = out_dir / "eval"
    eval_dir.mkdir(parents=True, exist_ok=True)
    json_path = eval_dir / f"{mode}.json"
    json_path.write_text(json.dumps(payload, indent=1, sort_keys=True))
    csv_path = eval_dir / f"{mode}.csv"
    lines = ["id,substitutions,insertions,deletions,reference_words,reference,hypothesis"]
    for u in report.utterances:
        lines.append(
            f"{u.utt_id},{u.substitutions},{u.insertions},{u.deletions},"
            f"{u.reference_words},{' '.join(u.reference)},{' '.join(u.hypothesis)}"
        )
    csv_path.write_text("".join(l + "\n" for l in lines))
    _update_manifest(out_dir, f"eval:{mode}", config, [json_path, csv_path])
    print(f"mode {mode}: WER {100 * report.wer:.2f}% "
          f"({report.errors} errors / {report.reference_words} words)")
    return 0


def cmd_report(args) -> int:
    out_dir = Path(args.out_dir)
    eval_dir = out_dir / "eval"
    rows = []
    evals = {}
    for mode in MODES:
        path = eval_dir / f"{mode}.json"
        if not path.exists():
            continue
        data = json.loads(path.read_text())
        evals[mode] = data
        rows.append(ModeSummary(
            mode=mode, wer=data["wer"], substitutions=data["substitutions"],
            insertions=data["insertions"], deletions=data["deletions"],
            reference_words=data["reference_words"],
        ))
    if not rows:
        raise FileNotFoundError(f"no evaluation results under {eval_dir}; run eval first")

    summary: dict[str, float | None] = {}
    word_eval = evals.get("word-only")
    if word_eval and "oov" in word_eval:
        oov = word_eval["oov"]
        summary["baseline_wer"] = oov["baseline_wer"]
        summary["oracle_wer"] = oov["oracle_wer"]
        summary["oov_contribution"] = oov["contribution"]
        if "hybrid" in evals:
            summary["hybrid_wer"] = evals["hybrid"]["wer"]
            summary["recovery_rate"] = recovery_rate_from_wers(
                oov["baseline_wer"], evals["hybrid"]["wer"], oov["contribution"]
            )

    curves = {}
    for stage, name in (("word stage", "word_loss.csv"), ("char stage", "char_loss.csv")):
        path = out_dir / name
        if path.exists():
            curves[stage] = model_mod.load_loss_curve(path)

    written = render_report(out_dir / "report", rows, summary, curves or None)
    _update_manifest(out_dir, "report", {}, written)
    print(f"report written to {out_dir / 'report'}")
    return 0


def _add_common(sub, *, config=True, seed=False):
    sub.add_argument("--out-dir", required=True, help="run directory for all artifacts")
    if config:
        sub.add_argument("--config", help="JSON config file merged over defaults")
    if seed:
        sub.add_argument("--seed", type=int, help="override corpus and model seeds")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hybridctc",
        description="Word-level CTC recognizer with character-level OOV backoff",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("gen-corpus", help="synthesize train/test corpora")
    _add_common(sub, seed=True)
    sub.set_defaults(func=cmd_gen_corpus)

    sub = subs.add_parser("build-vocab", help="build word vocabulary and character set")
    _add_common(sub)
    sub.add_argument("--min-count", type=int, help="rare-word threshold")
    sub.add_argument("--charset", choices=["cs28", "cs83"], help="character inventory")
    sub.set_defaults(func=cmd_build_vocab)

    sub = subs.add_parser("train-word", help="stage 1: train all layers on word CTC")
    _add_common(sub, seed=True)
    sub.add_argument("--row-conv-context", type=int,
                     help="char-head row convolution context (0 disables)")
    sub.set_defaults(func=cmd_train_word)

    sub = subs.add_parser("train-char",
                          help="stage 2: freeze shared layers, train char head")
    _add_common(sub)
    sub.set_defaults(func=cmd_train_char)

    sub = subs.add_parser("decode", help="decode the test split")
    _add_common(sub)
    sub.add_argument("--mode", choices=list(MODES), help="decoding mode")
    sub.add_argument("--beam", type=int, help="beam width for constrained decoding")
    sub.add_argument("--lexicon", help="lexicon file for the character graph")
    sub.set_defaults(func=cmd_decode)

    sub = subs.add_parser("add-hotwords", help="extend a lexicon with new words")
    _add_common(sub, config=False)
    sub.add_argument("--words", nargs="*", help="hot words to add")
    sub.add_argument("--words-file", help="file of hot words, one per line")
    sub.add_argument("--lexicon", help="base lexicon (default: out-dir/lexicon.txt)")
    sub.add_argument("--out", help="output lexicon path (default: out-dir/lexicon-hot.txt)")
    sub.set_defaults(func=cmd_add_hotwords)

    sub = subs.add_parser("eval", help="score a decode against references")
    _add_common(sub)
    sub.add_argument("--mode", choices=list(MODES), help="decode output to score")
    sub.set_defaults(func=cmd_eval)

    sub = subs.add_parser("report", help="render Markdown/CSV tables and figures")
    _add_common(sub, config=False)
    sub.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # one machine-parseable line, nonzero exit
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
