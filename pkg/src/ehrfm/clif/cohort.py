"""Cohort selection, chronological splits, outcome labels and summary tables."""

from __future__ import annotations

import dataclasses
import math

import numpy as np
import pandas as pd

from .bundle import DAY_MS, EVENT_TABLES, HOUR_MS, ClifBundle

SPLITS = ("train", "val", "test")

MIN_AGE = 18
MIN_STAY_MS = 24 * HOUR_MS
LONG_STAY_MS = 7 * DAY_MS
WINDOW_MS = 24 * HOUR_MS

OUTCOME_COLUMNS = (
    "same_admission_death",
    "long_length_of_stay",
    "icu_within_24h",
    "icu_any",
    "imv_within_24h",
    "imv_any",
)

# evaluated outcome -> (label column, column whose positives are excluded)
OUTCOMES = {
    "same_admission_death": ("same_admission_death", None),
    "long_length_of_stay": ("long_length_of_stay", None),
    "icu_admission": ("icu_any", "icu_within_24h"),
    "imv_event": ("imv_any", "imv_within_24h"),
}


def outcome_target(outcomes: pd.DataFrame, outcome: str) -> tuple[np.ndarray, np.ndarray]:
    """Labels for an evaluated outcome and the mask of rows eligible for it.

    ICU and IMV outcomes are only evaluated on stays without that event in the
    first 24 hours, so those rows are masked out.
    """
    label_col, exclude_col = OUTCOMES[outcome]
    y = outcomes[label_col].to_numpy(dtype=bool)
    if exclude_col is None:
        keep = np.ones(len(outcomes), dtype=bool)
    else:
        keep = ~outcomes[exclude_col].to_numpy(dtype=bool)
    return y, keep


def filter_cohort(bundle: ClifBundle) -> ClifBundle:
    """Keep adult stays lasting at least 24 hours and drop orphaned rows."""
    hosp = bundle.hospitalization
    stay = hosp["discharge_dttm"] - hosp["admission_dttm"]
    keep = (hosp["age_at_admission"] >= MIN_AGE) & (stay >= MIN_STAY_MS)
    return bundle.restrict(hosp.loc[keep, "hospitalization_id"])


class EmptyCohortError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class SplitAssignment:
    assignment: dict[str, str]
    time_ranges: dict[str, tuple[int, int] | None]

    def patients(self, split: str) -> list[str]:
        return [pid for pid, s in self.assignment.items() if s == split]

    def counts(self) -> dict[str, int]:
        return {s: sum(1 for v in self.assignment.values() if v == s) for s in SPLITS}

    def hospitalization_splits(self, bundle: ClifBundle) -> pd.Series:
        """Split of every hospitalization, indexed by hospitalization_id."""
        hosp = bundle.hospitalization
        return pd.Series(
            hosp["patient_id"].map(self.assignment).to_numpy(),
            index=pd.Index(hosp["hospitalization_id"], name="hospitalization_id"),
            name="split",
        )

    def hospitalizations(self, bundle: ClifBundle, split: str) -> list[str]:
        s = self.hospitalization_splits(bundle)
        return s.index[s == split].tolist()

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {"patient_id": list(self.assignment), "split": list(self.assignment.values())}
        )

    @classmethod
    def from_frame(cls, df: pd.DataFrame, bundle: ClifBundle | None = None) -> "SplitAssignment":
        assignment = dict(zip(df["patient_id"].astype(str), df["split"].astype(str)))
        ranges: dict[str, tuple[int, int] | None] = {s: None for s in SPLITS}
        if bundle is not None:
            ranges = _time_ranges(assignment, _first_admissions(bundle))
        return cls(assignment, ranges)


def _first_admissions(bundle: ClifBundle) -> pd.Series:
    return bundle.hospitalization.groupby("patient_id")["admission_dttm"].min()


def _time_ranges(assignment, first) -> dict[str, tuple[int, int] | None]:
    ranges = {}
    for split in SPLITS:
        times = [int(first[p]) for p, s in assignment.items() if s == split]
        ranges[split] = (min(times), max(times)) if times else None
    return ranges


def split_sizes(n: int, ratios) -> list[int]:
    """Largest-remainder apportionment of ``n`` items; each size is within 1 of n*ratio."""
    raw = [n * r for r in ratios]
    sizes = [math.floor(x + 1e-9) for x in raw]
    leftover = n - sum(sizes)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - sizes[i]), i))
    for i in order[:leftover]:
        sizes[i] += 1
    return sizes


def assign_splits(bundle: ClifBundle, ratios=(0.7, 0.1, 0.2)) -> SplitAssignment:
    """Assign patients to train/val/test in order of their first admission."""
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    first = _first_admissions(bundle)
    if first.empty:
        raise EmptyCohortError("cannot split an empty cohort")
    ordered = sorted(first.index, key=lambda pid: (int(first[pid]), str(pid)))
    sizes = split_sizes(len(ordered), ratios)
    assignment = {}
    start = 0
    for split, size in zip(SPLITS, sizes):
        for pid in ordered[start:start + size]:
            assignment[str(pid)] = split
        start += size
    return SplitAssignment(assignment, _time_ranges(assignment, first))


def derive_outcomes(bundle: ClifBundle) -> pd.DataFrame:
    """Outcome flags per hospitalization, indexed and sorted by hospitalization_id."""
    hosp = bundle.hospitalization.set_index("hospitalization_id").sort_index()
    adm = hosp["admission_dttm"]
    out = pd.DataFrame(index=hosp.index)
    out["same_admission_death"] = (hosp["discharge_category"] == "expired").to_numpy()
    out["long_length_of_stay"] = ((hosp["discharge_dttm"] - adm) >= LONG_STAY_MS).to_numpy()

    def flags(df, time_col, mask):
        ev = df.loc[mask, ["hospitalization_id", time_col]]
        offset = ev[time_col].to_numpy() - adm.reindex(ev["hospitalization_id"]).to_numpy()
        ids = ev["hospitalization_id"].to_numpy()
        any_ = out.index.isin(set(ids))
        early = out.index.isin(set(ids[offset <= WINDOW_MS]))
        return early, any_

    adt = bundle.adt
    out["icu_within_24h"], out["icu_any"] = flags(
        adt, "in_dttm", adt["location_category"] == "icu")
    resp = bundle.respiratory_support
    out["imv_within_24h"], out["imv_any"] = flags(
        resp, "start_dttm", resp["device_category"] == "imv")
    return out.loc[:, list(OUTCOME_COLUMNS)]


# display rows of the cohort summary, matching the published tables
RACE_GROUPS = {
    "African American": ("Black or African American",),
    "Asian": ("Asian",),
    "Caucasian": ("White",),
    "Native American": ("American Indian or Alaska Native",),
    "Pacific Islander": ("Native Hawaiian or Other Pacific Islander",),
    "Unknown/Other": ("Other", "unknown"),
}

SUMMARY_OUTCOMES = {
    "inhospital mortality": "same_admission_death",
    "long length of stay": "long_length_of_stay",
    "ICU (w/in 24h)": "icu_within_24h",
    "ICU (any)": "icu_any",
    "IMV (w/in 24h)": "imv_within_24h",
    "IMV (any)": "imv_any",
}


def _cell(stays: pd.DataFrame, lengths) -> dict:
    n = len(stays)
    cell: dict = {"count": n}

    def mean(x):
        return float(np.mean(x)) if n else None

    if lengths is not None:
        cell["timeline len. (@24h)"] = mean(stays["timeline_length"].to_numpy(dtype=float))
    cell["age (avg.)"] = mean(stays["age_at_admission"].to_numpy(dtype=float))
    cell["fraction female"] = mean(stays["sex_category"].to_numpy() == "Female")
    for label, members in RACE_GROUPS.items():
        cell[f"-- {label}"] = mean(stays["race_category"].isin(members).to_numpy())
    cell["-- Hispanic"] = mean(stays["ethnicity_category"].to_numpy() == "Hispanic")
    for label, col in SUMMARY_OUTCOMES.items():
        cell[label] = mean(stays[col].to_numpy(dtype=bool))
    return cell


def summarize_cohort(bundle: ClifBundle, splits: SplitAssignment, outcomes: pd.DataFrame,
                     outlier_flags=None, timeline_lengths=None) -> dict:
    """Demographic and outcome summary per split and inlier/outlier subset.

    ``outlier_flags`` and ``timeline_lengths`` are optional mappings from
    hospitalization_id. Without outlier flags only the ``all`` column is emitted.
    """
    stays = bundle.hospitalization.merge(bundle.patient, on="patient_id", how="left")
    stays = stays.set_index("hospitalization_id")
    stays = stays.join(outcomes, how="left")
    stays["split"] = splits.hospitalization_splits(bundle).reindex(stays.index)
    if timeline_lengths is not None:
        stays["timeline_length"] = pd.Series(timeline_lengths).reindex(stays.index)
    if outlier_flags is not None:
        stays["outlier"] = pd.Series(outlier_flags).reindex(stays.index).fillna(False).astype(bool)

    summary: dict = {}
    for split in SPLITS:
        part = stays[stays["split"] == split]
        cells = {}
        if outlier_flags is not None:
            cells["inliers"] = _cell(part[~part["outlier"]], timeline_lengths)
            cells["outliers"] = _cell(part[part["outlier"]], timeline_lengths)
        cells["all"] = _cell(part, timeline_lengths)
        summary[split] = cells
    return summary
