"""Category-value tokenization of CLIF hospitalizations and batch builders."""

from .batching import Batch, left_pad_batch, pack_sequences, pack_stream
from .binning import DecileBinner, bundle_values, fit_deciles
from .estimator import ClifTokenizer
from .timeline import (
    MAX_LEN,
    GrammarReport,
    TokenTimeline,
    load_timelines,
    save_timelines,
    tokenize_bundle,
    tokenize_hospitalization,
    truncate_24h,
    uniform_random_truncate,
    validate_grammar,
)
from .vocab import (
    DECILE_OFFSET,
    DECILE_TOKENS,
    N_DECILES,
    PAD,
    TL_END,
    TL_START,
    Vocabulary,
    decile_token,
    is_decile,
    learn_vocab,
)

__all__ = [
    "Batch",
    "left_pad_batch",
    "pack_sequences",
    "pack_stream",
    "DecileBinner",
    "bundle_values",
    "fit_deciles",
    "ClifTokenizer",
    "MAX_LEN",
    "GrammarReport",
    "TokenTimeline",
    "load_timelines",
    "save_timelines",
    "tokenize_bundle",
    "tokenize_hospitalization",
    "truncate_24h",
    "uniform_random_truncate",
    "validate_grammar",
    "DECILE_OFFSET",
    "DECILE_TOKENS",
    "N_DECILES",
    "PAD",
    "TL_END",
    "TL_START",
    "Vocabulary",
    "decile_token",
    "is_decile",
    "learn_vocab",
]
