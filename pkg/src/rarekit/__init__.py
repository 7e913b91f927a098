"""Rare-word example retrieval and demonstration toolkit.

Library + CLI for rare-word corpus re-splitting, example-prepended dataset
construction, a trainable cross-modal dense retriever over precomputed
embeddings, the prefix-masked loss, and the rare-word evaluation suite.
"""

from .corpus import Corpus, Utterance, normalize_word, parse_manifest, tokenize, write_manifest
from .embedding import (
    AttentionPooler,
    EmbeddingStore,
    FrameMatrix,
    attention_pool,
    mean_pool,
    read_store,
    write_store,
)
from .errors import ParseError, RarekitError, StoreFormatError, ValidationError
from .masked_loss import TargetLayout, build_mask, masked_nll, validate_prefix
from .metrics import (
    EvalReport,
    RareWordAccuracy,
    bleu,
    oracle_ceiling,
    rare_word_accuracy,
    retrieval_topk_accuracy,
    wer,
)
from .prepender import (
    SEP_TOKEN,
    PrependedPair,
    build_gold_test_set,
    build_prepended_train_set,
    concat_target,
    sentence_rare_word,
)
from .retriever import (
    PoolingConfig,
    RetrievalResult,
    RetrieverModel,
    TrainConfig,
    contrastive_loss,
    encode,
    grad_contrastive,
    load_model,
    retrieve_topk,
    same_speaker_proportion,
    save_model,
    similarity,
    train,
)
from .splitter import (
    RareWordCatalog,
    SplitBundle,
    count_frequencies,
    partition,
    split_dev_tst,
    verify_splits,
)
from .synth import SynthConfig, gen_corpus, gen_embeddings

__version__ = "0.1.0"

__all__ = [
    "AttentionPooler",
    "Corpus",
    "EmbeddingStore",
    "EvalReport",
    "FrameMatrix",
    "ParseError",
    "PoolingConfig",
    "PrependedPair",
    "RareWordAccuracy",
    "RareWordCatalog",
    "RarekitError",
    "RetrievalResult",
    "RetrieverModel",
    "SEP_TOKEN",
    "SplitBundle",
    "StoreFormatError",
    "SynthConfig",
    "TargetLayout",
    "TrainConfig",
    "Utterance",
    "ValidationError",
    "attention_pool",
    "bleu",
    "build_gold_test_set",
    "build_mask",
    "build_prepended_train_set",
    "concat_target",
    "contrastive_loss",
    "count_frequencies",
    "encode",
    "gen_corpus",
    "gen_embeddings",
    "grad_contrastive",
    "load_model",
    "masked_nll",
    "mean_pool",
    "normalize_word",
    "oracle_ceiling",
    "parse_manifest",
    "partition",
    "rare_word_accuracy",
    "read_store",
    "retrieval_topk_accuracy",
    "retrieve_topk",
    "same_speaker_proportion",
    "save_model",
    "sentence_rare_word",
    "similarity",
    "split_dev_tst",
    "tokenize",
    "train",
    "validate_prefix",
    "verify_splits",
    "wer",
    "write_manifest",
    "write_store",
]
