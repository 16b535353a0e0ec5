"""Word-level CTC recognition with a character-level backoff for OOV and hot words."""

from .ctc import (CtcResult, LogPosteriorLattice, brute_force_ctc, collapse,
                  ctc_loss, greedy_decode)
from .corpus import Corpus, CorpusConfig, Utterance, generate
from .hybrid import DecodeConfig, HybridResult, hybrid_decode, splice_oov
from .lexicon import BeamResult, CharTrie, add_words, build_trie, constrained_decode, \
    max_output_decode
from .metrics import WerReport, oov_attributed_wer, recovery_rate, \
    recovery_rate_from_wers, score_corpus, wer
from .model import (HybridModel, ModelConfig, RowConvolution, TrainConfig,
                    freeze_shared, row_convolution, train_char_stage,
                    train_word_stage, unfreeze_shared)
from .segments import TokenSegment, WordSpan, extract_segments, overlap, \
    word_spans_from_chars
from .tokenizer import (CharSet, WordVocab, build_charset_28, build_charset_83,
                        build_word_vocab, decode_chars, encode_chars)

__version__ = "0.1.0"
