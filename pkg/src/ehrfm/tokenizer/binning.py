"""Per-category decile binning of measured values."""

from __future__ import annotations

import json
import os

import numpy as np
import pandas as pd
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ..clif import ClifBundle

QUANTILES = np.arange(1, 10) / 10.0
MIN_DISTINCT = 10

# binner key prefix -> (table, category column, value column)
VALUE_SOURCES = {
    "vital": ("vitals", "vital_category", "value"),
    "lab": ("labs", "lab_category", "value"),
    "med": ("medication_admin_continuous", "med_category", "dose"),
    "assess": ("patient_assessments", "assessment_category", "value"),
}
AGE_KEY = "age"


def bundle_values(bundle: ClifBundle) -> pd.DataFrame:
    """All binnable values of a bundle as a (key, value) frame.

    Keys are ``<group>:<category>`` for measured categories and ``age`` for
    age at admission.
    """
    parts = []
    for group, (table, cat_col, val_col) in VALUE_SOURCES.items():
        df = getattr(bundle, table)
        parts.append(pd.DataFrame({
            "key": group + ":" + df[cat_col].astype(str),
            "value": df[val_col].to_numpy(dtype=float),
        }))
    parts.append(pd.DataFrame({
        "key": AGE_KEY,
        "value": bundle.hospitalization["age_at_admission"].to_numpy(dtype=float),
    }))
    return pd.concat(parts, ignore_index=True)


class DecileBinner(TransformerMixin, BaseEstimator):
    """Learns 9 cut points per category and maps values to deciles 0..9.

    Bins are left-closed: a value equal to a cut point goes to the higher
    decile. Values below the first cut map to 0, above the last to 9.
    Categories whose training values are all identical map every value to 0.
    Categories with fewer than 10 distinct training values are listed in
    ``degenerate_`` but binned normally.
    """

    def fit(self, keys, values=None):
        keys, values = _split_input(keys, values)
        frame = pd.DataFrame({"key": keys, "value": values})
        self.cuts_ = {}
        self.n_train_ = {}
        self.degenerate_ = []
        for key, grp in frame.groupby("key", sort=True):
            v = grp["value"].to_numpy(dtype=float)
            self.cuts_[key] = np.quantile(v, QUANTILES, method="linear")
            self.n_train_[key] = int(v.size)
            if np.unique(v).size < MIN_DISTINCT:
                self.degenerate_.append(key)
        return self

    def bin(self, key: str, values) -> np.ndarray:
        check_is_fitted(self, "cuts_")
        v = np.asarray(values, dtype=float)
        cuts = self.cuts_.get(key)
        if cuts is None or cuts[0] == cuts[-1]:
            return np.zeros(v.shape, dtype=np.int64)
        return np.clip(np.searchsorted(cuts, v, side="right"), 0, 9).astype(np.int64)

    def transform(self, keys, values=None) -> np.ndarray:
        keys, values = _split_input(keys, values)
        out = np.zeros(len(values), dtype=np.int64)
        keys = pd.Series(keys)
        for key, idx in keys.groupby(keys, sort=False).groups.items():
            idx = np.asarray(idx)
            out[idx] = self.bin(key, values[idx])
        return out

    def to_json(self) -> dict:
        check_is_fitted(self, "cuts_")
        return {
            "cuts": {k: [float(c) for c in v] for k, v in self.cuts_.items()},
            "n_train": dict(self.n_train_),
            "degenerate": list(self.degenerate_),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "DecileBinner":
        binner = cls()
        binner.cuts_ = {k: np.asarray(v, dtype=float) for k, v in obj["cuts"].items()}
        binner.n_train_ = {k: int(v) for k, v in obj.get("n_train", {}).items()}
        binner.degenerate_ = list(obj.get("degenerate", []))
        return binner

    def save(self, path: str | os.PathLike) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DecileBinner":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


def _split_input(keys, values):
    if values is None:
        frame = pd.DataFrame(keys)
        return frame["key"].to_numpy(dtype=object), frame["value"].to_numpy(dtype=float)
    return np.asarray(keys, dtype=object), np.asarray(values, dtype=float)


def fit_deciles(train_bundle: ClifBundle) -> DecileBinner:
    return DecileBinner().fit(bundle_values(train_bundle))
