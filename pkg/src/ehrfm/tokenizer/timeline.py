"""Compiling hospitalizations into token timelines."""

from __future__ import annotations

import dataclasses
import json
import os

import numpy as np
import pandas as pd

from ..clif import HOUR_MS, OUTCOME_COLUMNS, ClifBundle
from .binning import AGE_KEY, VALUE_SOURCES, DecileBinner
from .vocab import PAD, PRONE, TL_END, TL_START, VALUED_GROUPS, Vocabulary, decile_token, is_decile

WINDOW_MS = 24 * HOUR_MS
MAX_LEN = 1024
PREFIX_LEN = 6

# events sharing a timestamp are ordered by table
_TABLE_RANK = {"adt": 0, "respiratory_support": 1, "labs": 2, "vitals": 3,
               "medication_admin_continuous": 4, "patient_assessments": 5}


@dataclasses.dataclass
class TokenTimeline:
    """One hospitalization as token ids with per-token offsets from admission (ms)."""

    hospitalization_id: str
    tokens: np.ndarray
    times: np.ndarray
    labels: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.times = np.asarray(self.times, dtype=np.int64)
        if self.tokens.shape != self.times.shape:
            raise ValueError("tokens and times must have the same length")

    def __len__(self) -> int:
        return int(self.tokens.size)

    @property
    def complete(self) -> bool:
        return self.tokens.size > 0 and self.tokens[-1] == TL_END

    def prefix(self, n: int) -> "TokenTimeline":
        return TokenTimeline(self.hospitalization_id, self.tokens[:n], self.times[:n], dict(self.labels))

    def to_json(self) -> dict:
        return {
            "id": self.hospitalization_id,
            "tokens": self.tokens.tolist(),
            "times_ms": self.times.tolist(),
            "labels": {k: bool(v) for k, v in self.labels.items()},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "TokenTimeline":
        return cls(obj["id"], obj["tokens"], obj["times_ms"], obj.get("labels", {}))


def _group_lookup(vocab: Vocabulary, group: str, values: pd.Series) -> np.ndarray:
    ids = vocab.group_ids(group)
    fallback = ids.get("unknown")
    mapped = values.astype(str).map(ids)
    if mapped.isna().any():
        if fallback is None:
            missing = values[mapped.isna()].iloc[0]
            raise KeyError(f"category {missing!r} of group {group!r} not in vocabulary")
        mapped = mapped.fillna(fallback)
    return mapped.to_numpy(dtype=np.int64)


def _event_arrays(bundle: ClifBundle, vocab: Vocabulary, binner: DecileBinner,
                  stay_index: pd.Series, admission: np.ndarray):
    """Event records as (stay, time, rank, row, token slots[3])."""
    stays, times, ranks, rows, slots = [], [], [], [], []

    def add(table, time_col, tok):
        df = getattr(bundle, table)
        s = stay_index.reindex(df["hospitalization_id"]).to_numpy()
        keep = ~np.isnan(s)
        s = s[keep].astype(np.int64)
        stays.append(s)
        times.append(df[time_col].to_numpy()[keep] - admission[s])
        ranks.append(np.full(s.size, _TABLE_RANK[table]))
        rows.append(np.arange(len(df))[keep])
        slots.append(tok[keep])

    adt = bundle.adt
    tok = np.full((len(adt), 3), -1, dtype=np.int64)
    tok[:, 0] = _group_lookup(vocab, "adt", adt["location_category"])
    add("adt", "in_dttm", tok)

    rs = bundle.respiratory_support
    tok = np.full((len(rs), 3), -1, dtype=np.int64)
    tok[:, 0] = _group_lookup(vocab, "resp_mode", rs["mode_category"])
    tok[:, 1] = _group_lookup(vocab, "resp_device", rs["device_category"])
    tok[:, 2] = np.where(rs["prone_flag"].to_numpy(dtype=bool), vocab[PRONE], -1)
    add("respiratory_support", "start_dttm", tok)

    time_cols = {"vitals": "recorded_dttm", "labs": "result_available_dttm",
                 "medication_admin_continuous": "admin_dttm",
                 "patient_assessments": "recorded_dttm"}
    for group in VALUED_GROUPS:
        table, cat_col, val_col = VALUE_SOURCES[group]
        df = getattr(bundle, table)
        tok = np.full((len(df), 3), -1, dtype=np.int64)
        tok[:, 0] = _group_lookup(vocab, group, df[cat_col])
        keys = (group + ":" + df[cat_col].astype(str)).to_numpy(dtype=object)
        tok[:, 1] = decile_token(binner.transform(keys, df[val_col].to_numpy(dtype=float)))
        add(table, time_cols[table], tok)

    return (np.concatenate(stays), np.concatenate(times), np.concatenate(ranks),
            np.concatenate(rows), np.concatenate(slots))


def tokenize_bundle(bundle: ClifBundle, vocab: Vocabulary, binner: DecileBinner,
                    outcomes: pd.DataFrame | None = None) -> list[TokenTimeline]:
    """Tokenize every hospitalization of a bundle, in hospitalization table order."""
    hosp = bundle.hospitalization.reset_index(drop=True)
    ids = hosp["hospitalization_id"].to_numpy(dtype=object)
    stay_index = pd.Series(np.arange(len(hosp)), index=ids)
    admission = hosp["admission_dttm"].to_numpy()
    los = hosp["discharge_dttm"].to_numpy() - admission

    pats = bundle.patient.set_index("patient_id").reindex(hosp["patient_id"])
    prefix = np.stack([
        np.full(len(hosp), TL_START),
        _group_lookup(vocab, "race", pats["race_category"]),
        _group_lookup(vocab, "eth", pats["ethnicity_category"]),
        _group_lookup(vocab, "sex", pats["sex_category"]),
        decile_token(binner.bin(AGE_KEY, hosp["age_at_admission"].to_numpy(dtype=float))),
        _group_lookup(vocab, "adm", hosp["admission_type_category"]),
    ], axis=1)
    discharge = _group_lookup(vocab, "dc", hosp["discharge_category"])

    stay, t, rank, row, slots = _event_arrays(bundle, vocab, binner, stay_index, admission)
    order = np.lexsort((row, rank, t, stay))
    stay, t, slots = stay[order], t[order], slots[order]
    valid = slots >= 0
    per_event = valid.sum(axis=1)
    flat_tokens = slots[valid]
    flat_times = np.repeat(t, per_event)
    flat_stay = np.repeat(stay, per_event)
    bounds = np.searchsorted(flat_stay, np.arange(len(hosp) + 1))

    labels = None
    if outcomes is not None:
        labels = outcomes.reindex(ids).loc[:, list(OUTCOME_COLUMNS)]

    timelines = []
    for i, hid in enumerate(ids):
        lo, hi = bounds[i], bounds[i + 1]
        tokens = np.concatenate([prefix[i], flat_tokens[lo:hi], [discharge[i], TL_END]])
        times = np.concatenate([np.zeros(PREFIX_LEN, dtype=np.int64), flat_times[lo:hi],
                                [los[i], los[i]]])
        lab = {} if labels is None else {k: bool(v) for k, v in labels.iloc[i].items()}
        timelines.append(TokenTimeline(str(hid), tokens, times, lab))
    return timelines


def tokenize_hospitalization(bundle: ClifBundle, vocab: Vocabulary, binner: DecileBinner,
                             hospitalization_id: str,
                             outcomes: pd.DataFrame | None = None) -> TokenTimeline:
    hosp = bundle.hospitalization
    if not (hosp["hospitalization_id"] == hospitalization_id).any():
        raise KeyError(f"unknown hospitalization_id {hospitalization_id!r}")
    return tokenize_bundle(bundle.restrict([hospitalization_id]), vocab, binner, outcomes)[0]


def truncate_24h(timeline: TokenTimeline, max_len: int = MAX_LEN) -> TokenTimeline:
    """Tokens recorded within 24 hours of admission, capped at ``max_len``.

    Discharge and timeline-end tokens are dropped. The cap never separates a
    category token from its decile token; if it would, both are dropped.
    """
    n = len(timeline)
    if timeline.complete:
        n -= 2
    keep = int(np.searchsorted(timeline.times[:n], WINDOW_MS, side="right"))
    keep = min(keep, max_len)
    if keep < n and keep > 0 and is_decile(timeline.tokens[keep]) and keep > 5:
        keep -= 1
    return timeline.prefix(keep)


def uniform_random_truncate(timeline: TokenTimeline, rng: np.random.Generator) -> TokenTimeline:
    """The first i tokens with i drawn uniformly from 1..len(timeline)."""
    n = len(timeline)
    if n < 1:
        raise ValueError("cannot truncate an empty timeline")
    return timeline.prefix(int(rng.integers(1, n + 1)))


@dataclasses.dataclass(frozen=True)
class GrammarReport:
    valid: bool
    position: int | None = None
    message: str | None = None

    def __bool__(self) -> bool:
        return self.valid


_PREFIX_KINDS = ("special", "race", "eth", "sex", "decile", "adm")
_PREFIX_NAMES = ("TL_START", "race", "ethnicity", "sex", "age decile", "admission type")


def validate_grammar(timeline: TokenTimeline, vocab: Vocabulary) -> GrammarReport:
    """Check a (possibly truncated) timeline against the token grammar.

    Timelines without the closing discharge/TL_END tokens are accepted as
    prefixes, but a trailing category token missing its value is reported.
    """
    tokens, times = timeline.tokens, timeline.times
    n = tokens.size
    if n == 0:
        return GrammarReport(False, 0, "empty timeline")
    if np.any(tokens < 0) or np.any(tokens >= len(vocab)):
        pos = int(np.flatnonzero((tokens < 0) | (tokens >= len(vocab)))[0])
        return GrammarReport(False, pos, "token id out of range")
    if n > 1 and np.any(np.diff(times) < 0):
        pos = int(np.flatnonzero(np.diff(times) < 0)[0]) + 1
        return GrammarReport(False, pos, "event times decrease")
    kinds = vocab.kinds[tokens]
    for pos in range(min(n, len(_PREFIX_KINDS))):
        ok = kinds[pos] == _PREFIX_KINDS[pos]
        if pos == 0:
            ok = tokens[0] == TL_START
        if not ok:
            if kinds[pos] == "decile" and pos != 4:
                return GrammarReport(False, pos, "decile without category")
            return GrammarReport(False, pos, f"expected {_PREFIX_NAMES[pos]} token")

    pos = len(_PREFIX_KINDS)
    while pos < n:
        kind, tok = kinds[pos], tokens[pos]
        if kind in VALUED_GROUPS:
            if pos + 1 >= n:
                return GrammarReport(False, pos, "category without value")
            if kinds[pos + 1] != "decile":
                return GrammarReport(False, pos + 1, "category without value")
            pos += 2
        elif kind == "adt":
            pos += 1
        elif kind == "resp_mode":
            if pos + 1 < n and kinds[pos + 1] != "resp_device":
                return GrammarReport(False, pos + 1, "respiratory mode without device")
            pos += 2
            if pos < n and kinds[pos] == "prone":
                pos += 1
        elif kind == "dc":
            if pos + 1 < n and tokens[pos + 1] != TL_END:
                return GrammarReport(False, pos + 1, "discharge not followed by TL_END")
            if pos + 2 < n:
                return GrammarReport(False, pos + 2, "tokens after TL_END")
            return GrammarReport(True)
        elif kind == "decile":
            return GrammarReport(False, pos, "decile without category")
        elif tok == TL_END:
            return GrammarReport(False, pos, "TL_END before discharge token")
        elif tok == PAD:
            return GrammarReport(False, pos, "PAD inside timeline")
        else:
            return GrammarReport(False, pos, f"unexpected {vocab.tokens[tok]} token")
    return GrammarReport(True)


def save_timelines(timelines, path: str | os.PathLike) -> None:
    with open(path, "w") as fh:
        for tl in timelines:
            fh.write(json.dumps(tl.to_json(), separators=(",", ":")))
            fh.write("\n")


def load_timelines(path: str | os.PathLike) -> list[TokenTimeline]:
    with open(path) as fh:
        return [TokenTimeline.from_json(json.loads(line)) for line in fh if line.strip()]
