"""Reading and writing CLIF tables as one CSV per table."""

from __future__ import annotations

import os
import pathlib

import numpy as np
import pandas as pd

from .bundle import (
    TABLES,
    ClifBundle,
    ClifParseError,
    MissingTableError,
    normalize_categories,
)

_TRUE = {"true", "1", "t", "yes", "y"}
_FALSE = {"false", "0", "f", "no", "n", ""}


def _parse_time(table: str, column: str, raw: pd.Series) -> np.ndarray:
    parsed = pd.to_datetime(raw, utc=True, format="ISO8601", errors="coerce")
    bad = parsed.isna()
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise ClifParseError(
            f"{table} row {i + 1}: unparseable timestamp in {column}: {raw.iloc[i]!r}"
        )
    return parsed.dt.tz_localize(None).astype("datetime64[ms]").to_numpy().astype(np.int64)


def _parse_num(table: str, column: str, raw: pd.Series) -> np.ndarray:
    try:
        # per-element float() round-trips exactly, unlike pandas' fast parser
        values = raw.astype(np.float64).to_numpy()
        bad = ~np.isfinite(values)
    except ValueError:
        values = None
        bad = pd.to_numeric(raw, errors="coerce").isna().to_numpy()
    if values is None or bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise ClifParseError(f"{table} row {i + 1}: non-numeric {column}: {raw.iloc[i]!r}")
    return values


def _parse_bool(table: str, column: str, raw: pd.Series) -> np.ndarray:
    lowered = raw.fillna("").astype(str).str.strip().str.lower()
    ok = lowered.isin(_TRUE | _FALSE)
    if not ok.all():
        i = int(np.flatnonzero(~ok.to_numpy())[0])
        raise ClifParseError(f"{table} row {i + 1}: non-boolean {column}: {raw.iloc[i]!r}")
    return lowered.isin(_TRUE).to_numpy()


def read_table(path: pathlib.Path, name: str) -> pd.DataFrame:
    columns = TABLES[name]
    raw = pd.read_csv(path, dtype=str, keep_default_na=False, na_values=[""], encoding="utf-8")
    missing = [c for c in columns if c not in raw.columns]
    if missing:
        raise ClifParseError(f"{path.name}: missing column(s) {', '.join(missing)}")
    out = {}
    for col, kind in columns.items():
        series = raw[col]
        if kind == "id":
            if series.isna().any():
                i = int(np.flatnonzero(series.isna().to_numpy())[0])
                raise ClifParseError(f"{name} row {i + 1}: empty {col}")
            out[col] = series.astype(object)
        elif kind == "time":
            out[col] = _parse_time(name, col, series)
        elif kind == "num":
            out[col] = _parse_num(name, col, series)
        elif kind == "bool":
            out[col] = _parse_bool(name, col, series)
        else:
            out[col] = normalize_categories(col, series)
    return pd.DataFrame(out, columns=list(columns))


def parse_bundle(directory: str | os.PathLike, format: str = "csv",
                 out_of_window: str = "error") -> ClifBundle:
    """Load and validate the CLIF tables found in ``directory``.

    Each table is read from ``<table>.csv``. Category values outside the
    built-in enumeration are mapped to ``unknown``.
    """
    if format != "csv":
        raise ValueError(f"unsupported format {format!r}")
    directory = pathlib.Path(directory)
    tables = {}
    for name in TABLES:
        path = directory / f"{name}.csv"
        if not path.is_file():
            raise MissingTableError(f"missing table file {path}")
        tables[name] = read_table(path, name)
    return ClifBundle.from_tables(tables).validate(out_of_window=out_of_window)


def format_times(ms: np.ndarray) -> np.ndarray:
    """Render integer epoch milliseconds as ISO-8601 UTC strings."""
    stamps = np.datetime_as_string(np.asarray(ms, dtype=np.int64).astype("datetime64[ms]"), unit="ms")
    return np.char.add(stamps.astype(str), "Z")


def write_bundle(bundle: ClifBundle, directory: str | os.PathLike) -> None:
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, df in bundle.tables().items():
        out = df.copy()
        for col, kind in TABLES[name].items():
            if kind == "time":
                out[col] = format_times(out[col].to_numpy())
            elif kind == "bool":
                out[col] = np.where(out[col].to_numpy(dtype=bool), "true", "false")
        out.to_csv(directory / f"{name}.csv", index=False, lineterminator="\n")
