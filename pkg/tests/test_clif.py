import numpy as np
import pandas as pd
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_bundle
from ehrfm.clif import (
    DAY_MS,
    HOUR_MS,
    SPLITS,
    ClifParseError,
    EmptyCohortError,
    IntegrityError,
    MissingTableError,
    SplitAssignment,
    SynthConfig,
    assign_splits,
    derive_outcomes,
    filter_cohort,
    outcome_target,
    parse_bundle,
    summarize_cohort,
    synth_cohort,
    write_bundle,
)
from ehrfm.tokenizer import fit_deciles, learn_vocab, tokenize_bundle, truncate_24h


# ------------------------------------------------------------------ parsing

def test_round_trip_preserves_bundle(tmp_path):
    bundle = synth_cohort(SynthConfig(40, "A"), seed=3)
    write_bundle(bundle, tmp_path)
    back = parse_bundle(tmp_path)
    assert back.equals(bundle)
    assert back.row_counts() == bundle.row_counts()


def test_numeric_strings_parse_to_floats(tmp_path):
    b = make_bundle([{"hid": "h1", "hours": 30}],
                    {"labs": [{"hospitalization_id": "h1", "h": 2, "lab_category": "lactate",
                               "value": 7.2}]})
    write_bundle(b, tmp_path)
    labs = parse_bundle(tmp_path).labs
    assert labs["value"].dtype == np.float64
    assert labs["value"].iloc[0] == 7.2


def test_unknown_hospitalization_is_integrity_error(tmp_path):
    b = make_bundle([{"hid": "h1", "hours": 30}],
                    {"vitals": [{"hospitalization_id": "h1", "h": 1, "vital_category": "sbp",
                                 "value": 120.0}]})
    write_bundle(b, tmp_path)
    vitals = pd.read_csv(tmp_path / "vitals.csv", dtype=str)
    vitals.loc[0, "hospitalization_id"] = "ghost"
    vitals.to_csv(tmp_path / "vitals.csv", index=False)
    with pytest.raises(IntegrityError, match="ghost"):
        parse_bundle(tmp_path)


def test_missing_table_file(tmp_path):
    write_bundle(make_bundle([{"hid": "h1", "hours": 30}]), tmp_path)
    (tmp_path / "adt.csv").unlink()
    with pytest.raises(MissingTableError):
        parse_bundle(tmp_path)


def test_malformed_number_reports_row(tmp_path):
    b = make_bundle([{"hid": "h1", "hours": 30}],
                    {"labs": [{"hospitalization_id": "h1", "h": 2, "lab_category": "lactate",
                               "value": 1.0}]})
    write_bundle(b, tmp_path)
    labs = pd.read_csv(tmp_path / "labs.csv", dtype=str)
    labs.loc[0, "value"] = "seven"
    labs.to_csv(tmp_path / "labs.csv", index=False)
    with pytest.raises(ClifParseError, match="row 1"):
        parse_bundle(tmp_path)


def test_unknown_category_maps_to_unknown(tmp_path):
    b = make_bundle([{"hid": "h1", "hours": 30}],
                    {"vitals": [{"hospitalization_id": "h1", "h": 1, "vital_category": "sbp",
                                 "value": 120.0}]})
    write_bundle(b, tmp_path)
    vitals = pd.read_csv(tmp_path / "vitals.csv", dtype=str)
    vitals.loc[0, "vital_category"] = "pulse_pressure"
    vitals.to_csv(tmp_path / "vitals.csv", index=False)
    assert parse_bundle(tmp_path).vitals["vital_category"].iloc[0] == "unknown"


def test_admission_after_discharge_rejected():
    b = make_bundle([{"hid": "h1", "hours": 30}])
    hosp = b.hospitalization.copy()
    hosp.loc[0, "discharge_dttm"] = hosp.loc[0, "admission_dttm"]
    with pytest.raises(IntegrityError):
        b.replace(hospitalization=hosp).validate()


def test_event_outside_stay_rejected_or_dropped():
    b = make_bundle([{"hid": "h1", "hours": 30}],
                    {"vitals": [{"hospitalization_id": "h1", "h": 31, "vital_category": "sbp",
                                 "value": 120.0},
                                {"hospitalization_id": "h1", "h": 3, "vital_category": "sbp",
                                 "value": 110.0}]})
    with pytest.raises(IntegrityError):
        b.validate()
    assert len(b.validate(out_of_window="drop").vitals) == 1


# ------------------------------------------------------------------ cohort

def test_cohort_thresholds():
    b = make_bundle([
        {"hid": "short", "hours": 23.9},
        {"hid": "exact", "hours": 24.0},
        {"hid": "minor", "hours": 48, "age": 17},
        {"hid": "adult", "hours": 48, "age": 18},
    ])
    kept = set(filter_cohort(b).hospitalization["hospitalization_id"])
    assert kept == {"exact", "adult"}


def test_cohort_drops_orphaned_patients_and_events():
    b = make_bundle([{"hid": "a", "hours": 30}, {"hid": "b", "hours": 10}],
                    {"vitals": [{"hospitalization_id": "b", "h": 1, "vital_category": "sbp",
                                 "value": 1.0}]})
    out = filter_cohort(b)
    assert list(out.patient["patient_id"]) == ["pa"]
    assert out.vitals.empty


# ------------------------------------------------------------------ splits

def _many(n, stays_per_patient=1):
    stays = []
    for i in range(n):
        for j in range(stays_per_patient):
            stays.append({"hid": f"h{i}_{j}", "pid": f"p{i:03d}", "hours": 30,
                          "start": 1000 * i + 100 * j})
    return make_bundle(stays)


def test_split_counts_70_10_20():
    s = assign_splits(_many(10))
    assert s.counts() == {"train": 7, "val": 1, "test": 2}
    assert s.patients("train") == [f"p{i:03d}" for i in range(7)]


def test_split_counts_5_5_90():
    assert assign_splits(_many(100), (0.05, 0.05, 0.9)).counts() == {
        "train": 5, "val": 5, "test": 90}


def test_patient_stays_share_split():
    b = _many(10, stays_per_patient=3)
    hs = assign_splits(b).hospitalization_splits(b)
    per_patient = hs.groupby(hs.index.str.split("_").str[0]).nunique()
    assert (per_patient == 1).all()


def test_split_rejects_bad_ratios():
    with pytest.raises(ValueError):
        assign_splits(_many(3), (0.5, 0.5, 0.5))


def test_split_frame_round_trip():
    b = _many(20)
    s = assign_splits(b)
    back = SplitAssignment.from_frame(s.to_frame(), b)
    assert back == s


@settings(max_examples=60, deadline=None)
@given(n=st.integers(1, 120),
       w=st.tuples(st.integers(0, 20), st.integers(0, 20), st.integers(1, 20)),
       seed=st.integers(0, 2**32 - 1))
def test_split_properties(n, w, seed):
    ratios = tuple(x / sum(w) for x in w)
    ratios = (ratios[0], ratios[1], 1.0 - ratios[0] - ratios[1])
    rng = np.random.default_rng(seed)
    starts = rng.integers(0, 500, n)
    b = make_bundle([{"hid": f"h{i}", "pid": f"p{i}", "hours": 30, "start": int(starts[i])}
                     for i in range(n)])
    s = assign_splits(b, ratios)
    counts = s.counts()
    assert sum(counts.values()) == n
    assert set(s.assignment) == {f"p{i}" for i in range(n)}
    for split, r in zip(SPLITS, ratios):
        assert abs(counts[split] - n * r) <= 1
    # chronological: every train patient's first admission precedes every val/test one
    ranges = [s.time_ranges[x] for x in SPLITS if s.time_ranges[x] is not None]
    for earlier, later in zip(ranges, ranges[1:]):
        assert earlier[1] <= later[0]


def test_empty_cohort_split():
    b = make_bundle([{"hid": "h", "hours": 1}])
    with pytest.raises(EmptyCohortError):
        assign_splits(filter_cohort(b))


# ------------------------------------------------------------------ outcomes

def test_outcome_definitions():
    b = make_bundle(
        [{"hid": "late_icu", "hours": 48}, {"hid": "early_icu", "hours": 48},
         {"hid": "boundary", "hours": 48}, {"hid": "llos", "hours": 6.99 * 24},
         {"hid": "long", "hours": 7 * 24}, {"hid": "died", "hours": 30, "discharge": "expired"}],
        {"adt": [{"hospitalization_id": "late_icu", "h": 25, "location_category": "icu"},
                 {"hospitalization_id": "early_icu", "h": 2, "location_category": "icu"},
                 {"hospitalization_id": "boundary", "h": 24, "location_category": "icu"},
                 {"hospitalization_id": "died", "h": 1, "location_category": "ward"}],
         "respiratory_support": [{"hospitalization_id": "late_icu", "h": 30,
                                  "mode_category": "simv", "device_category": "imv"},
                                 {"hospitalization_id": "died", "h": 3,
                                  "mode_category": "other", "device_category": "nasal cannula"}]})
    o = derive_outcomes(b)
    assert (o.loc["late_icu", ["icu_within_24h", "icu_any"]] == [False, True]).all()
    assert (o.loc["early_icu", ["icu_within_24h", "icu_any"]] == [True, True]).all()
    assert o.loc["boundary", "icu_within_24h"]
    assert not o.loc["llos", "long_length_of_stay"]
    assert o.loc["long", "long_length_of_stay"]
    assert o["same_admission_death"].tolist() == [
        name == "died" for name in o.index]
    assert not o.loc["died", "icu_any"]
    assert not o.loc["died", "imv_any"]
    assert o.loc["late_icu", "imv_any"] and not o.loc["late_icu", "imv_within_24h"]


def test_outcome_target_masks_early_events():
    o = pd.DataFrame({"icu_any": [True, True, False], "icu_within_24h": [True, False, False],
                      "same_admission_death": [False, True, False]})
    y, keep = outcome_target(o, "icu_admission")
    assert keep.tolist() == [False, True, True]
    assert y[keep].tolist() == [True, False]
    _, keep = outcome_target(o, "same_admission_death")
    assert keep.all()


def test_outcomes_idempotent_and_order_free():
    b = synth_cohort(SynthConfig(60, "B"), seed=4)
    o = derive_outcomes(b)
    shuffled = b.replace(**{name: df.sample(frac=1.0, random_state=1)
                            for name, df in b.tables().items()})
    pd.testing.assert_frame_equal(derive_outcomes(shuffled), o)
    pd.testing.assert_frame_equal(derive_outcomes(b), o)


# ------------------------------------------------------------------ synth

def test_synth_is_deterministic():
    a = synth_cohort(SynthConfig(50, "A"), seed=9)
    b = synth_cohort(SynthConfig(50, "A"), seed=9)
    c = synth_cohort(SynthConfig(50, "A"), seed=10)
    assert a.equals(b)
    assert not a.equals(c)


def test_synth_passes_integrity():
    synth_cohort(SynthConfig(80, "B"), seed=0).validate()


def test_synth_rejects_unknown_profile():
    with pytest.raises(ValueError):
        synth_cohort(SynthConfig(5, "Z"), seed=0)


@pytest.mark.parametrize("profile, band", [("A", (96.9, 101.7)), ("B", (380.0, 420.0))])
def test_profile_24h_length(profile, band):
    n = 1000 if profile == "A" else 400
    b = filter_cohort(synth_cohort(SynthConfig(n, profile), seed=0))
    vocab, binner = learn_vocab(b), fit_deciles(b)
    lengths = [len(truncate_24h(tl)) for tl in tokenize_bundle(b, vocab, binner)]
    assert band[0] <= np.mean(lengths) <= band[1]


# ------------------------------------------------------------------ summary

def test_summary_cells():
    b = make_bundle([{"hid": "h1", "hours": 30, "discharge": "expired", "sex": "Female"}])
    s = assign_splits(b, (1.0, 0.0, 0.0))
    summary = summarize_cohort(b, s, derive_outcomes(b))
    cell = summary["train"]["all"]
    assert cell["count"] == 1
    assert cell["inhospital mortality"] == 1.0
    assert cell["fraction female"] == 1.0
    assert summary["test"]["all"]["count"] == 0


def test_summary_outlier_columns():
    b = _many(10)
    s = assign_splits(b)
    flags = {h: h == "h0_0" for h in b.hospitalization["hospitalization_id"]}
    cells = summarize_cohort(b, s, derive_outcomes(b), outlier_flags=flags)["train"]
    assert cells["outliers"]["count"] == 1
    assert cells["inliers"]["count"] + cells["outliers"]["count"] == cells["all"]["count"]
