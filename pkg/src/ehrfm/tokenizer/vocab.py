"""Token registry for CLIF timelines."""

from __future__ import annotations

import json
import os

import numpy as np

from ..clif import ClifBundle, categories_version, known_categories

PAD, TL_START, TL_END = 0, 1, 2
SPECIAL_TOKENS = ("PAD", "TL_START", "TL_END")
N_DECILES = 10
DECILE_OFFSET = len(SPECIAL_TOKENS)
DECILE_TOKENS = tuple(f"D{i}" for i in range(N_DECILES))
PRONE = "prone"

# token prefix -> (table, category column); ordering of this dict fixes the id layout
TOKEN_GROUPS = {
    "adm": ("hospitalization", "admission_type_category"),
    "adt": ("adt", "location_category"),
    "assess": ("patient_assessments", "assessment_category"),
    "dc": ("hospitalization", "discharge_category"),
    "eth": ("patient", "ethnicity_category"),
    "lab": ("labs", "lab_category"),
    "med": ("medication_admin_continuous", "med_category"),
    "race": ("patient", "race_category"),
    "resp_device": ("respiratory_support", "device_category"),
    "resp_mode": ("respiratory_support", "mode_category"),
    "sex": ("patient", "sex_category"),
    "vital": ("vitals", "vital_category"),
}

# groups whose tokens are followed by a decile token
VALUED_GROUPS = ("vital", "lab", "med", "assess")

KINDS = ("special", "decile", "prone") + tuple(TOKEN_GROUPS)


def decile_token(d) -> np.ndarray | int:
    return np.asarray(d) + DECILE_OFFSET if np.ndim(d) else int(d) + DECILE_OFFSET


def is_decile(token_ids) -> np.ndarray | bool:
    t = np.asarray(token_ids)
    return (t >= DECILE_OFFSET) & (t < DECILE_OFFSET + N_DECILES)


class Vocabulary:
    """Dense token-id registry.

    Ids 0..2 are PAD, TL_START, TL_END and ids 3..12 the shared decile tokens;
    category tokens follow, sorted by group and category name.
    """

    def __init__(self, tokens, metadata=None):
        tokens = list(tokens)
        if tuple(tokens[:DECILE_OFFSET + N_DECILES]) != SPECIAL_TOKENS + DECILE_TOKENS:
            raise ValueError("vocabulary must start with the special and decile tokens")
        if len(set(tokens)) != len(tokens):
            raise ValueError("duplicate tokens in vocabulary")
        self.tokens = tokens
        self.index = {t: i for i, t in enumerate(tokens)}
        self.metadata = dict(metadata or {})
        self.kinds = np.array([self._kind(t) for t in tokens], dtype=object)

    @staticmethod
    def _kind(token: str) -> str:
        if token in SPECIAL_TOKENS:
            return "special"
        if token in DECILE_TOKENS:
            return "decile"
        if token == PRONE:
            return "prone"
        return token.split(":", 1)[0]

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, Vocabulary) and self.tokens == other.tokens

    def __getitem__(self, token: str) -> int:
        return self.index[token]

    def __contains__(self, token: str) -> bool:
        return token in self.index

    def token_id(self, group: str, category: str) -> int:
        return self.index[f"{group}:{category}"]

    def group_ids(self, group: str) -> dict[str, int]:
        """Category name -> id for one token group."""
        prefix = group + ":"
        return {t[len(prefix):]: i for i, t in enumerate(self.tokens) if t.startswith(prefix)}

    def decode(self, ids) -> list[str]:
        return [self.tokens[int(i)] for i in ids]

    def to_json(self) -> dict:
        return {"tokens": {t: i for i, t in enumerate(self.tokens)}, "metadata": self.metadata}

    @classmethod
    def from_json(cls, obj: dict) -> "Vocabulary":
        pairs = sorted(obj["tokens"].items(), key=lambda kv: kv[1])
        ids = [i for _, i in pairs]
        if ids != list(range(len(ids))):
            raise ValueError("token ids must be dense 0..V-1")
        return cls([t for t, _ in pairs], obj.get("metadata"))

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Vocabulary":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def learn_vocab(train_bundle: ClifBundle, include_builtin: bool = True) -> Vocabulary:
    """Build the vocabulary from a (filtered) training bundle.

    Every category seen in training gets a token; with ``include_builtin`` the
    built-in CLIF enumeration is added as well so sites sharing the
    enumeration share ids.
    """
    if train_bundle.hospitalization.empty:
        raise ValueError("cannot learn a vocabulary from an empty bundle")
    tokens = list(SPECIAL_TOKENS + DECILE_TOKENS)
    for group, (table, column) in TOKEN_GROUPS.items():
        seen = set(getattr(train_bundle, table)[column].dropna().astype(str))
        if include_builtin:
            seen |= set(known_categories(column))
        tokens.extend(f"{group}:{c}" for c in sorted(seen))
    tokens.append(PRONE)
    return Vocabulary(tokens, {"categories_version": categories_version()})
