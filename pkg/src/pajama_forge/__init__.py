"""Corpus preparation toolkit for multi-source LLM pretraining data."""

from .corpus_io import CorpusManifest, Document, read_shard, write_report
from .eval_metrics import ScoreVector, load_scores, rrgs
from .lowlen_filter import FilterPolicy, FilterReport, filter_corpus, should_keep
from .lsh_dedup import (
    DuplicateClusterSet,
    LshParams,
    SignatureStore,
    band_keys,
    cluster,
    deduplicate,
    find_duplicate_pairs,
)
from .minhash import MinHashSignature, ShingleParams, estimate_jaccard, shingles, signature
from .mixture import MixtureConfig, MixturePlan, build_plan, builtin_config, materialize
from .normalize import NormalizedText, normalize_for_dedup, normalize_for_filter
from .ptwd import PlateauTrigger, PtwdSchedule, PtwdState, advance_on_loss, wd_at
from .token_stats import SubsetRule, TokenDistribution, apply_subset, kl_divergence, kl_matrix
from .tokenizer import BpeModel, encode, load_bpe

__version__ = "0.1.0"
