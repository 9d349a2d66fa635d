"""In-memory representation of a CLIF site extract."""

from __future__ import annotations

import dataclasses
import functools
import json
from importlib import resources

import numpy as np
import pandas as pd

UNKNOWN = "unknown"

HOUR_MS = 3_600_000
DAY_MS = 24 * HOUR_MS

# column kinds: "id", "time", "num", "cat", "bool"
TABLES: dict[str, dict[str, str]] = {
    "patient": {
        "patient_id": "id",
        "race_category": "cat",
        "ethnicity_category": "cat",
        "sex_category": "cat",
    },
    "hospitalization": {
        "hospitalization_id": "id",
        "patient_id": "id",
        "admission_dttm": "time",
        "discharge_dttm": "time",
        "age_at_admission": "num",
        "admission_type_category": "cat",
        "discharge_category": "cat",
    },
    "adt": {
        "hospitalization_id": "id",
        "in_dttm": "time",
        "location_category": "cat",
    },
    "vitals": {
        "hospitalization_id": "id",
        "recorded_dttm": "time",
        "vital_category": "cat",
        "value": "num",
    },
    "labs": {
        "hospitalization_id": "id",
        "result_available_dttm": "time",
        "lab_category": "cat",
        "value": "num",
    },
    "medication_admin_continuous": {
        "hospitalization_id": "id",
        "admin_dttm": "time",
        "med_category": "cat",
        "dose": "num",
    },
    "respiratory_support": {
        "hospitalization_id": "id",
        "start_dttm": "time",
        "mode_category": "cat",
        "device_category": "cat",
        "prone_flag": "bool",
    },
    "patient_assessments": {
        "hospitalization_id": "id",
        "recorded_dttm": "time",
        "assessment_category": "cat",
        "value": "num",
    },
}

EVENT_TABLES = (
    "adt",
    "vitals",
    "labs",
    "medication_admin_continuous",
    "respiratory_support",
    "patient_assessments",
)

# timestamp column of each event table
EVENT_TIME = {
    "adt": "in_dttm",
    "vitals": "recorded_dttm",
    "labs": "result_available_dttm",
    "medication_admin_continuous": "admin_dttm",
    "respiratory_support": "start_dttm",
    "patient_assessments": "recorded_dttm",
}


class ClifError(ValueError):
    """Base class for CLIF ingestion failures."""


class MissingTableError(ClifError):
    pass


class ClifParseError(ClifError):
    pass


class IntegrityError(ClifError):
    pass


@functools.lru_cache(maxsize=None)
def _load_categories() -> dict:
    text = resources.files("ehrfm.clif").joinpath("categories.json").read_text()
    return json.loads(text)


def categories_version() -> str:
    return _load_categories()["version"]


def known_categories(column: str) -> tuple[str, ...]:
    """Built-in enumeration for a category column, with ``unknown`` appended."""
    values = _load_categories()[column]
    return tuple(values) + (UNKNOWN,)


def normalize_categories(column: str, values: pd.Series) -> pd.Series:
    """Map raw category strings onto the built-in enumeration.

    Matching is case-insensitive; anything outside the enumeration (including
    missing values) becomes ``unknown``.
    """
    lookup = {c.lower(): c for c in known_categories(column)}
    codes, uniques = pd.factorize(values)
    mapped = [lookup.get(str(u).strip().lower(), UNKNOWN) for u in uniques]
    return pd.Series(np.array(mapped + [UNKNOWN], dtype=object)[codes], index=values.index)


def _empty_table(name: str) -> pd.DataFrame:
    dtypes = {"id": object, "time": np.int64, "num": np.float64, "cat": object, "bool": bool}
    return pd.DataFrame(
        {col: pd.Series(dtype=dtypes[kind]) for col, kind in TABLES[name].items()}
    )


@dataclasses.dataclass(frozen=True)
class ClifBundle:
    """The CLIF tables of one site.

    Timestamps are integer milliseconds since the Unix epoch (UTC). Tables are
    treated as immutable; operations return new bundles.
    """

    patient: pd.DataFrame
    hospitalization: pd.DataFrame
    adt: pd.DataFrame
    vitals: pd.DataFrame
    labs: pd.DataFrame
    medication_admin_continuous: pd.DataFrame
    respiratory_support: pd.DataFrame
    patient_assessments: pd.DataFrame

    @classmethod
    def from_tables(cls, tables: dict[str, pd.DataFrame]) -> "ClifBundle":
        frames = {}
        for name in TABLES:
            df = tables.get(name)
            if df is None:
                df = _empty_table(name)
            frames[name] = df.loc[:, list(TABLES[name])].reset_index(drop=True)
        return cls(**frames)

    def tables(self) -> dict[str, pd.DataFrame]:
        return {name: getattr(self, name) for name in TABLES}

    def replace(self, **tables: pd.DataFrame) -> "ClifBundle":
        merged = self.tables()
        merged.update(tables)
        return ClifBundle.from_tables(merged)

    def row_counts(self) -> dict[str, int]:
        return {name: len(df) for name, df in self.tables().items()}

    def equals(self, other: "ClifBundle") -> bool:
        return all(
            getattr(self, name).equals(getattr(other, name)) for name in TABLES
        )

    def restrict(self, hospitalization_ids) -> "ClifBundle":
        """Sub-bundle holding only the given hospitalizations and their patients."""
        keep = set(hospitalization_ids)
        hosp = self.hospitalization[self.hospitalization["hospitalization_id"].isin(keep)]
        pats = self.patient[self.patient["patient_id"].isin(set(hosp["patient_id"]))]
        tables = {"patient": pats, "hospitalization": hosp}
        for name in EVENT_TABLES:
            df = getattr(self, name)
            tables[name] = df[df["hospitalization_id"].isin(keep)]
        return ClifBundle.from_tables(tables)

    def validate(self, out_of_window: str = "error") -> "ClifBundle":
        """Check referential integrity and time ordering.

        ``out_of_window`` is ``"error"`` or ``"drop"`` and controls event rows
        falling outside their hospitalization's admission/discharge window.
        Returns the (possibly filtered) bundle.
        """
        pids = set(self.patient["patient_id"])
        hosp = self.hospitalization
        bad = ~hosp["patient_id"].isin(pids)
        if bad.any():
            i = int(np.flatnonzero(bad.to_numpy())[0])
            raise IntegrityError(
                f"hospitalization row {i + 1}: unknown patient_id {hosp['patient_id'].iloc[i]!r}"
            )
        if hosp["hospitalization_id"].duplicated().any():
            dup = hosp["hospitalization_id"][hosp["hospitalization_id"].duplicated()].iloc[0]
            raise IntegrityError(f"duplicate hospitalization_id {dup!r}")
        order = hosp["admission_dttm"].to_numpy() >= hosp["discharge_dttm"].to_numpy()
        if order.any():
            i = int(np.flatnonzero(order)[0])
            raise IntegrityError(
                f"hospitalization row {i + 1}: admission_dttm is not before discharge_dttm"
            )

        window = hosp.set_index("hospitalization_id")[["admission_dttm", "discharge_dttm"]]
        replaced = {}
        for name in EVENT_TABLES:
            df = getattr(self, name)
            if df.empty:
                continue
            known = df["hospitalization_id"].isin(window.index)
            if not known.all():
                i = int(np.flatnonzero(~known.to_numpy())[0])
                raise IntegrityError(
                    f"{name} row {i + 1}: unknown hospitalization_id "
                    f"{df['hospitalization_id'].iloc[i]!r}"
                )
            t = df[EVENT_TIME[name]].to_numpy()
            w = window.loc[df["hospitalization_id"]]
            inside = (t >= w["admission_dttm"].to_numpy()) & (t <= w["discharge_dttm"].to_numpy())
            if not inside.all():
                if out_of_window == "drop":
                    replaced[name] = df[inside]
                else:
                    i = int(np.flatnonzero(~inside)[0])
                    raise IntegrityError(
                        f"{name} row {i + 1}: timestamp outside the admission window "
                        f"of {df['hospitalization_id'].iloc[i]!r}"
                    )
        return self.replace(**replaced) if replaced else self
