"""Synthetic CLIF cohorts with a latent-severity outcome model.

Every hospitalization draws three latent factors: general severity, respiratory
compromise and a site-specific "shift" factor. Measured values, event rates,
medications, transfers, respiratory support and outcomes all depend on these
factors, so outcomes are learnable from the first 24 hours of a timeline.
"""

from __future__ import annotations

import dataclasses

import numpy as np
import pandas as pd

from .bundle import HOUR_MS, ClifBundle, known_categories


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


# category -> (median value, log-scale spread, severity, respiratory, shift loadings)
MEASUREMENTS: dict[str, dict[str, tuple[float, float, float, float, float]]] = {
    "vital_category": {
        "temp_c": (37.0, 0.015, 0.6, 0.2, 0.3),
        "heart_rate": (84.0, 0.15, 1.0, 0.3, 0.1),
        "sbp": (122.0, 0.12, -0.8, 0.0, 0.0),
        "dbp": (70.0, 0.12, -0.6, 0.0, 0.0),
        "map": (86.0, 0.12, -0.9, 0.0, 0.0),
        "spo2": (96.0, 0.02, -0.3, -1.0, -0.3),
        "respiratory_rate": (18.0, 0.2, 0.3, 1.0, 0.2),
        "weight_kg": (80.0, 0.2, 0.0, 0.0, 0.0),
    },
    "lab_category": {
        "albumin": (3.5, 0.15, -0.8, 0.0, -0.2),
        "alt": (30.0, 0.5, 0.5, 0.0, 0.2),
        "ast": (32.0, 0.5, 0.6, 0.0, 0.2),
        "bicarbonate": (24.0, 0.12, -0.6, 0.4, 0.0),
        "bilirubin_total": (0.8, 0.5, 0.6, 0.0, 0.0),
        "bun": (18.0, 0.4, 0.8, 0.0, 0.0),
        "chloride": (102.0, 0.04, 0.2, 0.0, 0.0),
        "creatinine": (1.0, 0.4, 0.8, 0.0, 0.0),
        "crp": (20.0, 0.8, 0.3, 0.1, 1.0),
        "d_dimer": (0.6, 0.7, 0.3, 0.1, 1.0),
        "ferritin": (250.0, 0.6, 0.2, 0.0, 1.0),
        "glucose_serum": (120.0, 0.25, 0.5, 0.0, 0.1),
        "hemoglobin": (12.0, 0.15, -0.6, 0.0, 0.0),
        "lactate": (1.4, 0.45, 1.0, 0.2, 0.0),
        "lymphocytes_absolute": (1.5, 0.4, -0.3, 0.0, -1.0),
        "magnesium": (2.0, 0.1, 0.0, 0.0, 0.0),
        "pco2_arterial": (40.0, 0.15, 0.1, 1.0, 0.2),
        "ph_arterial": (7.4, 0.01, -0.6, -0.6, 0.0),
        "platelet_count": (220.0, 0.35, -0.6, 0.0, 0.1),
        "po2_arterial": (90.0, 0.3, -0.2, -1.0, -0.3),
        "potassium": (4.1, 0.1, 0.4, 0.0, 0.0),
        "sodium": (139.0, 0.02, 0.1, 0.0, 0.0),
        "troponin_t": (0.02, 0.9, 0.7, 0.0, 0.2),
        "wbc": (8.5, 0.35, 0.8, 0.1, 0.3),
    },
    "med_category": {
        "dexmedetomidine": (0.6, 0.4, 0.3, 0.8, 0.0),
        "dobutamine": (5.0, 0.3, 0.8, 0.0, 0.0),
        "epinephrine": (0.05, 0.5, 1.0, 0.0, 0.0),
        "fentanyl": (50.0, 0.5, 0.4, 0.8, 0.0),
        "heparin": (1000.0, 0.3, 0.2, 0.0, 0.6),
        "insulin": (3.0, 0.6, 0.4, 0.0, 0.0),
        "midazolam": (2.0, 0.5, 0.4, 0.8, 0.0),
        "norepinephrine": (0.08, 0.6, 1.0, 0.2, 0.0),
        "phenylephrine": (0.5, 0.5, 0.8, 0.0, 0.0),
        "propofol": (30.0, 0.4, 0.4, 0.9, 0.0),
        "vasopressin": (0.03, 0.3, 1.0, 0.0, 0.0),
    },
    "assessment_category": {
        "braden_total": (18.0, 0.12, -0.7, -0.3, 0.0),
        "cpot": (2.0, 0.5, 0.5, 0.3, 0.0),
        "gcs_total": (14.0, 0.1, -1.0, -0.3, 0.0),
        "rass": (3.0, 0.25, -0.5, -0.4, 0.0),
    },
}

# medication categories become more frequent with severity (first) or respiratory compromise
MED_PROPENSITY = {
    "dexmedetomidine": (0.0, 1.2),
    "dobutamine": (1.0, 0.0),
    "epinephrine": (1.4, 0.0),
    "fentanyl": (0.3, 1.2),
    "heparin": (0.0, 0.0),
    "insulin": (0.4, 0.0),
    "midazolam": (0.3, 1.2),
    "norepinephrine": (1.6, 0.3),
    "phenylephrine": (1.0, 0.0),
    "propofol": (0.3, 1.4),
    "vasopressin": (1.6, 0.0),
}

# vitals and labs are charted as panels sharing one timestamp, in this order
PANELS = {
    "vital_category": [
        ["heart_rate", "sbp", "dbp", "map", "spo2", "respiratory_rate", "temp_c"],
        ["weight_kg"],
    ],
    "lab_category": [
        ["sodium", "potassium", "chloride", "bicarbonate", "bun", "creatinine",
         "glucose_serum", "magnesium"],
        ["wbc", "hemoglobin", "platelet_count", "lymphocytes_absolute"],
        ["ph_arterial", "pco2_arterial", "po2_arterial", "lactate"],
        ["albumin", "alt", "ast", "bilirubin_total"],
        ["crp", "d_dimer", "ferritin", "troponin_t"],
    ],
}
PANEL_WEIGHTS = {"vital_category": [0.9, 0.1], "lab_category": [0.35, 0.25, 0.2, 0.1, 0.1]}
PANEL_MEMBER_P = 0.9
# panel members share a deviation drawn at charting time
PANEL_SHARED_SD = 1.0
PANEL_OWN_SD = 0.3

TABLE_OF = {
    "vital_category": ("vitals", "recorded_dttm"),
    "lab_category": ("labs", "result_available_dttm"),
    "med_category": ("medication_admin_continuous", "admin_dttm"),
    "assessment_category": ("patient_assessments", "recorded_dttm"),
}


@dataclasses.dataclass(frozen=True)
class SiteProfile:
    """Site-level parameters of the synthetic generator."""

    name: str
    start: str
    end: str
    race: dict[str, float]
    hispanic: float
    female: float
    age_mean: float
    age_sd: float
    minor_fraction: float
    extra_stays: float
    short_stay_fraction: float
    # latent factor means (severity, respiratory, shift)
    latent_mean: tuple[float, float, float]
    # events per hour of stay at zero severity, and log-rate gain per unit severity
    event_rate: float
    rate_gain: float
    nb_dispersion: float
    table_mix: dict[str, float]
    los_log_mean: float
    los_severity: float
    los_sd: float
    # logistic outcome models: (intercept, severity, respiratory, shift)
    death: tuple[float, float, float, float]
    icu: tuple[float, float, float, float]
    imv: tuple[float, float, float, float]
    icu_early: tuple[float, float]
    imv_early: tuple[float, float]
    admission_types: dict[str, float]
    # supplemental oxygen logit: (intercept, severity, respiratory, shift)
    o2: tuple[float, float, float, float] = (-1.0, 0.0, 2.0, 0.0)
    # optional logit for a stay escalated to high-flow nasal cannula, and the
    # log-odds that escalation adds to (icu, imv)
    hfnc: tuple[float, float, float, float] | None = None
    hfnc_escalation: tuple[float, float] = (0.0, 0.0)
    # hours between re-charted oxygen device rows; None charts the device once
    o2_recheck_h: float | None = None
    # per-table panel frequencies overriding PANEL_WEIGHTS
    panel_weights: dict[str, tuple[float, ...]] = dataclasses.field(default_factory=dict)


PROFILES: dict[str, SiteProfile] = {
    "A": SiteProfile(
        name="A",
        start="2008-01-01",
        end="2019-12-31",
        race={
            "Black or African American": 0.155,
            "Asian": 0.036,
            "White": 0.684,
            "American Indian or Alaska Native": 0.003,
            "Native Hawaiian or Other Pacific Islander": 0.001,
            "Other": 0.06,
            "unknown": 0.061,
        },
        hispanic=0.055,
        female=0.53,
        age_mean=60.5,
        age_sd=17.0,
        minor_fraction=0.02,
        extra_stays=0.3,
        short_stay_fraction=0.05,
        latent_mean=(0.0, 0.0, 0.0),
        event_rate=1.90,
        rate_gain=0.25,
        nb_dispersion=8.0,
        table_mix={
            "vital_category": 0.5,
            "lab_category": 0.3,
            "med_category": 0.06,
            "assessment_category": 0.14,
        },
        los_log_mean=4.3,
        los_severity=0.45,
        los_sd=0.6,
        death=(-3.4, 1.3, 0.5, 0.0),
        icu=(-1.4, 1.1, 0.6, 0.0),
        imv=(-2.4, 0.6, 1.3, 0.0),
        icu_early=(0.2, 0.8),
        imv_early=(-0.2, 0.8),
        admission_types={"ed": 0.7, "elective": 0.12, "direct": 0.08, "transfer": 0.08, "other": 0.02},
    ),
    "B": SiteProfile(
        name="B",
        start="2020-03-01",
        end="2022-03-01",
        race={
            "Black or African American": 0.70,
            "Asian": 0.018,
            "White": 0.23,
            "American Indian or Alaska Native": 0.002,
            "Native Hawaiian or Other Pacific Islander": 0.001,
            "Other": 0.03,
            "unknown": 0.019,
        },
        hispanic=0.055,
        female=0.56,
        age_mean=54.5,
        age_sd=18.0,
        minor_fraction=0.02,
        extra_stays=0.3,
        short_stay_fraction=0.05,
        latent_mean=(0.1, 0.1, 0.6),
        event_rate=7.8,
        rate_gain=0.35,
        nb_dispersion=4.0,
        table_mix={
            "vital_category": 0.55,
            "lab_category": 0.25,
            "med_category": 0.05,
            "assessment_category": 0.15,
        },
        los_log_mean=4.3,
        los_severity=0.45,
        los_sd=0.6,
        death=(-3.5, 1.3, 0.5, 0.0),
        icu=(-2.8, 0.3, 0.0, 1.0),
        imv=(-3.4, 0.2, 0.4, 1.0),
        icu_early=(0.2, 0.8),
        imv_early=(-0.2, 0.8),
        admission_types={"ed": 0.75, "elective": 0.1, "direct": 0.07, "transfer": 0.06, "other": 0.02},
        o2=(-1.0, 0.0, 1.5, 1.2),
        hfnc=(-1.6, 0.0, 0.3, 1.5),
        hfnc_escalation=(3.0, 3.0),
        o2_recheck_h=2.0,
        panel_weights={"lab_category": (0.25, 0.2, 0.15, 0.1, 0.3)},
    ),
}


@dataclasses.dataclass(frozen=True)
class SynthConfig:
    n_patients: int
    profile: str | SiteProfile = "A"
    id_prefix: str | None = None

    def resolve_profile(self) -> SiteProfile:
        if isinstance(self.profile, SiteProfile):
            return self.profile
        try:
            return PROFILES[self.profile]
        except KeyError:
            raise ValueError(f"unknown site profile {self.profile!r}") from None


def _check_profile(p: SiteProfile) -> None:
    rates = [p.event_rate, p.nb_dispersion, p.extra_stays, p.age_sd, p.los_sd]
    fracs = [p.minor_fraction, p.short_stay_fraction, p.female, p.hispanic]
    if any(r < 0 for r in rates) or any(not 0 <= f <= 1 for f in fracs):
        raise ValueError(f"profile {p.name!r} has negative rates or invalid fractions")
    for weights in (p.race, p.table_mix, p.admission_types):
        if any(w < 0 for w in weights.values()) or sum(weights.values()) <= 0:
            raise ValueError(f"profile {p.name!r} has invalid category weights")


def _choice(rng, options: dict[str, float], size: int) -> np.ndarray:
    keys = list(options)
    w = np.array([options[k] for k in keys], dtype=float)
    return np.array(keys, dtype=object)[rng.choice(len(keys), size=size, p=w / w.sum())]


def synth_cohort(config: SynthConfig, seed: int) -> ClifBundle:
    """Generate a deterministic synthetic CLIF bundle."""
    if config.n_patients <= 0:
        raise ValueError("n_patients must be positive")
    p = config.resolve_profile()
    _check_profile(p)
    prefix = config.id_prefix if config.id_prefix is not None else p.name
    rng = np.random.default_rng(seed)

    # patients
    n = config.n_patients
    patient_ids = np.array([f"{prefix}-P{i:06d}" for i in range(n)], dtype=object)
    race = _choice(rng, p.race, n)
    ethnicity = np.where(rng.random(n) < p.hispanic, "Hispanic", "Non-Hispanic").astype(object)
    sex = np.where(rng.random(n) < p.female, "Female", "Male").astype(object)
    base_age = np.clip(rng.normal(p.age_mean, p.age_sd, n), 18.0, 95.0)
    minors = rng.random(n) < p.minor_fraction
    base_age[minors] = rng.uniform(14.0, 18.0, minors.sum())
    frailty = rng.normal(0.0, 0.6, n)

    # hospitalizations
    n_stays = 1 + rng.poisson(p.extra_stays, n)
    owner = np.repeat(np.arange(n), n_stays)
    m = owner.size
    start_ms = pd.Timestamp(p.start, tz="UTC").value // 1_000_000
    end_ms = pd.Timestamp(p.end, tz="UTC").value // 1_000_000
    first_adm = rng.integers(start_ms, end_ms, n)

    lat = np.stack(
        [rng.normal(mu, 1.0, m) for mu in p.latent_mean], axis=1
    )
    lat[:, 0] = 0.8 * lat[:, 0] + frailty[owner]
    sev, resp, shift = lat[:, 0], lat[:, 1], lat[:, 2]

    los_h = 24.0 + np.exp(p.los_log_mean + p.los_severity * sev + p.los_sd * rng.normal(size=m))
    short = rng.random(m) < p.short_stay_fraction
    los_h[short] = rng.uniform(6.0, 23.9, short.sum())
    los_ms = np.round(los_h * HOUR_MS).astype(np.int64)

    admission = np.empty(m, dtype=np.int64)
    age = np.empty(m)
    pos = 0
    gaps = rng.exponential(120.0, m) * 24 * HOUR_MS
    for i in range(n):
        t = first_adm[i]
        for j in range(n_stays[i]):
            admission[pos] = t
            age[pos] = base_age[i] + (t - first_adm[i]) / (365.25 * 24 * HOUR_MS)
            t = t + los_ms[pos] + int(gaps[pos]) + HOUR_MS
            pos += 1
    discharge = admission + los_ms
    age = np.round(age, 1)

    def logit(coef):
        return coef[0] + coef[1] * sev + coef[2] * resp + coef[3] * shift

    # site-specific escalation drawn from its own stream so other profiles are unaffected
    if p.hfnc is not None:
        side = np.random.default_rng([seed, 1])
        hfnc = side.random(m) < _sigmoid(logit(p.hfnc))
    else:
        hfnc = np.zeros(m, dtype=bool)
    dead = rng.random(m) < _sigmoid(logit(p.death))
    icu = rng.random(m) < _sigmoid(logit(p.icu) + p.hfnc_escalation[0] * hfnc)
    imv = rng.random(m) < _sigmoid(logit(p.imv) + p.hfnc_escalation[1] * hfnc)
    icu_early = (rng.random(m) < _sigmoid(p.icu_early[0] + p.icu_early[1] * sev)) | (los_h <= 24.0)
    imv_early = (rng.random(m) < _sigmoid(p.imv_early[0] + p.imv_early[1] * resp)) | (los_h <= 24.0)

    def event_time(early):
        early_t = rng.uniform(0.5, 24.0, m) * HOUR_MS
        late_t = 24.0 * HOUR_MS + rng.random(m) * np.maximum(los_ms - 24 * HOUR_MS, 0)
        t = np.where(early, early_t, late_t)
        return np.minimum(t, los_ms).astype(np.int64)

    t_icu = event_time(icu_early)
    t_imv = event_time(imv_early)

    discharge_cat = _choice(
        rng,
        {"home": 0.62, "skilled nursing facility": 0.2, "acute care hospital": 0.05,
         "hospice": 0.03, "against medical advice": 0.02, "other": 0.08},
        m,
    )
    discharge_cat[dead] = "expired"
    adm_type = _choice(rng, p.admission_types, m)

    hosp_ids = np.array([f"{prefix}-H{i:07d}" for i in range(m)], dtype=object)
    hospitalization = pd.DataFrame({
        "hospitalization_id": hosp_ids,
        "patient_id": patient_ids[owner],
        "admission_dttm": admission,
        "discharge_dttm": discharge,
        "age_at_admission": age,
        "admission_type_category": adm_type,
        "discharge_category": discharge_cat,
    })
    patient = pd.DataFrame({
        "patient_id": patient_ids,
        "race_category": race,
        "ethnicity_category": ethnicity,
        "sex_category": sex,
    })

    # adt: start location, optional ward transfer, icu and step-down
    adt_rows = []
    first_loc = np.where(adm_type == "ed", "ed", "ward").astype(object)
    adt_rows.append((np.arange(m), np.zeros(m, dtype=np.int64), first_loc))
    ward_t = (rng.uniform(2.0, 10.0, m) * HOUR_MS).astype(np.int64)
    to_ward = (first_loc == "ed") & (~icu | (ward_t < t_icu)) & (ward_t < los_ms)
    adt_rows.append((np.flatnonzero(to_ward), ward_t[to_ward], "ward"))
    adt_rows.append((np.flatnonzero(icu), t_icu[icu], "icu"))
    step_t = t_icu + (rng.uniform(24.0, 72.0, m) * HOUR_MS).astype(np.int64)
    step = icu & (step_t < los_ms)
    adt_rows.append((np.flatnonzero(step), step_t[step], "stepdown"))
    adt = _event_frame(adt_rows, hosp_ids, admission, "in_dttm", "location_category")

    # respiratory support
    rs_idx, rs_t, rs_mode, rs_dev, rs_prone = [], [], [], [], []
    o2 = (rng.random(m) < _sigmoid(logit(p.o2))) | hfnc
    o2_t = (rng.uniform(0.0, 12.0, m) * HOUR_MS).astype(np.int64)
    o2_t = np.minimum(o2_t, los_ms)
    o2_dev = _choice(rng, {"nasal cannula": 0.6, "high flow nc": 0.25, "face mask": 0.1, "nippv": 0.05}, m)
    o2_dev[hfnc] = "high flow nc"
    sel = np.flatnonzero(o2)
    if p.o2_recheck_h is not None:
        # one row per charting interval until discharge
        n_rows = 1 + (los_ms[sel] - o2_t[sel]) // int(p.o2_recheck_h * HOUR_MS)
        step_k = np.arange(n_rows.sum()) - np.repeat(np.cumsum(n_rows) - n_rows, n_rows)
        sel = np.repeat(sel, n_rows)
        o2_rows = o2_t[sel] + step_k * int(p.o2_recheck_h * HOUR_MS)
    else:
        o2_rows = o2_t[sel]
    rs_idx.append(sel); rs_t.append(o2_rows); rs_mode.append(np.full(sel.size, "other", object))
    rs_dev.append(o2_dev[sel]); rs_prone.append(np.zeros(sel.size, bool))
    sel = np.flatnonzero(imv)
    rs_idx.append(sel); rs_t.append(t_imv[sel])
    rs_mode.append(np.full(sel.size, "assist control-volume control", object))
    rs_dev.append(np.full(sel.size, "imv", object))
    rs_prone.append(rng.random(sel.size) < _sigmoid(logit((-1.5, 0.0, 0.8, 0.8)))[sel])
    wean_t = t_imv + (rng.uniform(12.0, 48.0, m) * HOUR_MS).astype(np.int64)
    sel = np.flatnonzero(imv & (wean_t < los_ms))
    rs_idx.append(sel); rs_t.append(wean_t[sel])
    rs_mode.append(np.full(sel.size, "pressure support/cpap", object))
    rs_dev.append(np.full(sel.size, "imv", object)); rs_prone.append(np.zeros(sel.size, bool))
    idx = np.concatenate(rs_idx)
    respiratory = pd.DataFrame({
        "hospitalization_id": hosp_ids[idx],
        "start_dttm": admission[idx] + np.concatenate(rs_t),
        "mode_category": np.concatenate(rs_mode),
        "device_category": np.concatenate(rs_dev),
        "prone_flag": np.concatenate(rs_prone),
    })
    respiratory = _sort_events(respiratory, "start_dttm")

    # measured events
    mean_events = p.event_rate * los_h * np.exp(p.rate_gain * sev - 0.5 * p.rate_gain**2)
    k = p.nb_dispersion
    counts = rng.negative_binomial(k, k / (k + mean_events))
    tables = {}
    mix_keys = list(TABLE_OF)
    mix = np.array([p.table_mix.get(key, 0.0) for key in mix_keys])
    per_table = np.array([rng.multinomial(c, mix / mix.sum()) for c in counts]).reshape(m, len(mix_keys))
    for j, column in enumerate(mix_keys):
        table, time_col = TABLE_OF[column]
        tables[table] = _measurements(rng, column, time_col, per_table[:, j], lat,
                                      hosp_ids, admission, los_ms,
                                      p.panel_weights.get(column, PANEL_WEIGHTS.get(column)))

    return ClifBundle.from_tables({
        "patient": patient,
        "hospitalization": hospitalization,
        "adt": adt,
        "respiratory_support": respiratory,
        **tables,
    })


def _event_frame(rows, hosp_ids, admission, time_col, cat_col) -> pd.DataFrame:
    idx = np.concatenate([r[0] for r in rows])
    t = np.concatenate([r[1] for r in rows])
    cats = np.concatenate([
        r[2] if isinstance(r[2], np.ndarray) else np.full(len(r[0]), r[2], dtype=object)
        for r in rows
    ])
    df = pd.DataFrame({
        "hospitalization_id": hosp_ids[idx],
        time_col: admission[idx] + t,
        cat_col: cats,
    })
    return _sort_events(df, time_col)


def _sort_events(df: pd.DataFrame, time_col: str) -> pd.DataFrame:
    return df.sort_values(["hospitalization_id", time_col], kind="mergesort").reset_index(drop=True)


def _measurements(rng, column, time_col, counts, lat, hosp_ids, admission, los_ms,
                  panel_weights=None) -> pd.DataFrame:
    table, _ = TABLE_OF[column]
    spec = MEASUREMENTS[column]
    names = [c for c in known_categories(column) if c in spec]
    params = np.array([spec[c] for c in names])
    loadings = params[:, 2:5]
    m = len(counts)
    # per-stay category level and category frequency
    level = lat @ loadings.T + rng.normal(0.0, 0.6, (m, len(names)))
    if column == "med_category":
        prop = np.array([MED_PROPENSITY[c] for c in names])
        logw = lat[:, :2] @ prop.T - 1.0
    else:
        logw = np.zeros((m, len(names)))
    w = np.exp(logw)
    w /= w.sum(axis=1, keepdims=True)

    if column in PANELS:
        stay, cat, t, noise = _panel_events(rng, column, names, counts, los_ms, panel_weights)
    else:
        stay = np.repeat(np.arange(m), counts)
        # inverse-CDF category draw per event
        cum = np.cumsum(w, axis=1)[stay]
        cat = (rng.random(stay.size)[:, None] > cum).sum(axis=1)
        cat = np.minimum(cat, len(names) - 1)
        t = (rng.random(stay.size) * los_ms[stay]).astype(np.int64)
        noise = rng.normal(0.0, 0.5, stay.size)
    values = params[cat, 0] * np.exp(params[cat, 1] * (level[stay, cat] + noise))
    value_col = "dose" if column == "med_category" else "value"
    df = pd.DataFrame({
        "hospitalization_id": hosp_ids[stay],
        time_col: admission[stay] + t,
        column: np.array(names, dtype=object)[cat],
        value_col: values,
    })
    return _sort_events(df, time_col)


def _panel_events(rng, column, names, counts, los_ms, weights):
    """Group a stay's measurement budget into panels charted at one time each.

    Returns stay index, category index, time offset and value noise per row.
    """
    panels = PANELS[column]
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()
    sizes = np.array([len(pn) for pn in panels])
    mean_size = PANEL_MEMBER_P * (weights @ sizes)
    n_panels = rng.poisson(counts / mean_size)
    pstay = np.repeat(np.arange(len(counts)), n_panels)
    ptype = rng.choice(len(panels), size=pstay.size, p=weights)
    ptime = (rng.random(pstay.size) * los_ms[pstay]).astype(np.int64)
    index = {c: i for i, c in enumerate(names)}
    member = np.zeros((len(panels), sizes.max()), dtype=np.int64) - 1
    for j, pn in enumerate(panels):
        member[j, :len(pn)] = [index[c] for c in pn]
    grid = member[ptype]
    present = (grid >= 0) & (rng.random(grid.shape) < PANEL_MEMBER_P)
    shared = rng.normal(0.0, PANEL_SHARED_SD, pstay.size)
    rows = np.nonzero(present)
    noise = shared[rows[0]] + rng.normal(0.0, PANEL_OWN_SD, rows[0].size)
    return pstay[rows[0]], grid[rows], ptime[rows[0]], noise
