"""Scikit-learn style front end for the tokenizer."""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ..clif import ClifBundle
from .binning import fit_deciles
from .timeline import MAX_LEN, tokenize_bundle, truncate_24h
from .vocab import learn_vocab


class ClifTokenizer(BaseEstimator):
    """Learns the vocabulary and decile cut points on a training bundle.

    ``transform`` returns full timelines, or 24-hour timelines capped at
    ``max_len`` tokens when ``window_24h`` is set.
    """

    def __init__(self, max_len: int = MAX_LEN, window_24h: bool = False,
                 include_builtin: bool = True):
        self.max_len = max_len
        self.window_24h = window_24h
        self.include_builtin = include_builtin

    def fit(self, bundle: ClifBundle, y=None):
        self.vocab_ = learn_vocab(bundle, include_builtin=self.include_builtin)
        self.binner_ = fit_deciles(bundle)
        return self

    def transform(self, bundle: ClifBundle, outcomes=None):
        check_is_fitted(self, "vocab_")
        timelines = tokenize_bundle(bundle, self.vocab_, self.binner_, outcomes)
        if self.window_24h:
            timelines = [truncate_24h(tl, self.max_len) for tl in timelines]
        return timelines

    def fit_transform(self, bundle: ClifBundle, y=None, outcomes=None):
        return self.fit(bundle).transform(bundle, outcomes)
