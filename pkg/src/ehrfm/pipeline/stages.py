"""Pipeline stages: each reads upstream artifacts from the run directory and writes its own."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import shutil
import time
import warnings
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd
import torch

from .. import anomaly
from ..analytics import (
    add_intercept,
    dynamics_regression,
    feature_table,
    fit_logit_mle,
    pca_2d,
    realtime_curves,
    report_frame,
    subgroup_report,
)
from ..clif import (
    OUTCOME_COLUMNS,
    SPLITS,
    SplitAssignment,
    SynthConfig,
    assign_splits,
    derive_outcomes,
    filter_cohort,
    parse_bundle,
    summarize_cohort,
    synth_cohort,
    write_bundle,
)
from ..seqmodel import (
    ModelConfig,
    TrainSchedule,
    encode,
    finetune_classifier,
    head_from_coefficients,
    hidden_states,
    load_checkpoint,
    local_finetune,
    outcome_labels,
    predict_proba,
    prefix_probabilities,
    pretrain,
    save_checkpoint,
    write_training_log,
)
from ..tokenizer import (
    DECILE_OFFSET,
    N_DECILES,
    DecileBinner,
    Vocabulary,
    fit_deciles,
    learn_vocab,
    load_timelines,
    save_timelines,
    tokenize_bundle,
    truncate_24h,
    uniform_random_truncate,
)
from .config import ROLES, RunConfig
from .manifest import Manifest, StaleArtifactError, hash_path

log = logging.getLogger(__name__)

MORTALITY = "same_admission_death"


class LeakageError(RuntimeError):
    """A fitting input contains held-out test stays."""


# ---------------------------------------------------------------- helpers

def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, NaN/inf to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj) if math.isfinite(obj) else None
    return obj


def write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: Path):
    with open(path) as fh:
        return json.load(fh)


def _fresh_dir(path: Path) -> Path:
    if path.exists():
        shutil.rmtree(path)
    path.mkdir(parents=True)
    return path


def stage_seed(base: int, stage: str) -> int:
    return int(np.random.SeedSequence([base, *stage.encode()]).generate_state(1)[0])


@dataclasses.dataclass
class Run:
    cfg: RunConfig
    seed: int = 0

    @property
    def root(self) -> Path:
        return self.cfg.out

    def p(self, *parts) -> Path:
        return self.root.joinpath(*parts)

    @property
    def sites(self) -> list[str]:
        return [self.cfg.site_name(r) for r in ROLES]

    @property
    def source(self) -> str:
        return self.cfg.site_name("source")

    @property
    def target(self) -> str:
        return self.cfg.site_name("target")

    @property
    def outcomes(self) -> list[str]:
        return list(self.cfg.raw["outcomes"])

    # artifact readers
    def bundle(self, site):
        return parse_bundle(self.p("cohort", site))

    def outcome_frame(self, site) -> pd.DataFrame:
        df = pd.read_csv(self.p("cohort", f"{site}_outcomes.csv"),
                         dtype={"hospitalization_id": str})
        return df.set_index("hospitalization_id").astype(bool)

    def splits(self, site) -> SplitAssignment:
        return SplitAssignment.from_frame(pd.read_csv(self.p("splits", f"{site}.csv"), dtype=str))

    def timelines(self, site, split, kind="24h"):
        return load_timelines(self.p("timelines", kind, f"{site}_{split}.jsonl"))

    def reps(self, site, split):
        ids = read_json(self.p("reps", f"{site}_{split}_ids.json"))
        return ids, np.load(self.p("reps", f"{site}_{split}.npy"))

    def flags(self, site, split) -> pd.DataFrame:
        return anomaly.read_scores(self.p("forest", "scores", f"{site}_{split}.csv")) \
            .set_index("hospitalization_id")

    def base_model(self):
        return load_checkpoint(self.p("models", "pretrained.ckpt"))[0]

    def test_ids(self) -> set[str]:
        ids: set[str] = set()
        for site in self.sites:
            ids.update(tl.hospitalization_id for tl in self.timelines(site, "test"))
        return ids


def check_leakage(run: Run, fit_ids, what: str) -> dict:
    fit_ids = set(fit_ids)
    overlap = fit_ids & run.test_ids()
    if overlap:
        raise LeakageError(f"{what}: {len(overlap)} test stays in fitting input, "
                           f"e.g. {sorted(overlap)[0]}")
    return {"what": what, "n_fit_ids": len(fit_ids), "test_overlap": 0}


def _grid(scores_by_outcome: dict, timelines, flags: pd.DataFrame) -> dict:
    ids = [tl.hospitalization_id for tl in timelines]
    outlier = flags["flag"].reindex(ids).fillna(False).to_numpy(dtype=bool)
    labels, eligible = {}, {}
    for outcome in scores_by_outcome:
        labels[outcome], eligible[outcome] = outcome_labels(timelines, outcome)
    return subgroup_report(scores_by_outcome, labels, outlier, eligible)


# ---------------------------------------------------------------- stages

def stage_synth(run: Run) -> dict:
    info = {}
    for i, role in enumerate(ROLES):
        site = run.cfg.site(role)
        if "synth" not in site:
            continue
        seed = int(np.random.SeedSequence([run.seed, i]).generate_state(1)[0])
        syn = site["synth"]
        bundle = synth_cohort(SynthConfig(int(syn["n_patients"]), syn["profile"],
                                          id_prefix=site["name"]), seed=seed)
        write_bundle(bundle, _fresh_dir(run.p("raw", site["name"])))
        info[site["name"]] = {"seed": seed, "rows": bundle.row_counts()}
    return info


def stage_ingest(run: Run) -> dict:
    out = _fresh_dir(run.p("cohort"))
    info = {}
    for role in ROLES:
        site = run.cfg.site(role)
        src = run.cfg.resolve(site["directory"]) if "directory" in site else run.p("raw", site["name"])
        bundle = filter_cohort(parse_bundle(src))
        if not len(bundle.hospitalization):
            from ..clif import EmptyCohortError
            raise EmptyCohortError(f"site {site['name']} has no stays after cohort filtering")
        write_bundle(bundle, out / site["name"])
        derive_outcomes(bundle).to_csv(out / f"{site['name']}_outcomes.csv")
        info[site["name"]] = bundle.row_counts()
    return info


def stage_split(run: Run) -> dict:
    out = _fresh_dir(run.p("splits"))
    info = {}
    for role in ROLES:
        name = run.cfg.site_name(role)
        assignment = assign_splits(run.bundle(name), tuple(run.cfg.site(role)["ratios"]))
        assignment.to_frame().to_csv(out / f"{name}.csv", index=False)
        info[name] = assignment.counts()
    return info


def stage_vocab(run: Run) -> dict:
    out = _fresh_dir(run.p("vocab"))
    bundle = run.bundle(run.source)
    train = bundle.restrict(run.splits(run.source).hospitalizations(bundle, "train"))
    vocab = learn_vocab(train)
    vocab.save(out / "vocab.json")
    fit_deciles(train).save(out / "deciles.json")
    return {"vocab_size": len(vocab),
            "leakage": [_ids_disjoint(run, train.hospitalization["hospitalization_id"], "vocab")]}


def _ids_disjoint(run: Run, fit_ids, what: str) -> dict:
    # before timelines exist, test ids come from the split files
    test = set()
    for site in run.sites:
        bundle_hosp = pd.read_csv(run.p("cohort", site, "hospitalization.csv"), dtype=str)
        split = run.splits(site)
        pats = set(split.patients("test"))
        test.update(bundle_hosp.loc[bundle_hosp["patient_id"].isin(pats), "hospitalization_id"])
    fit_ids = set(fit_ids)
    if fit_ids & test:
        raise LeakageError(f"{what}: test stays in fitting input")
    return {"what": what, "n_fit_ids": len(fit_ids), "test_overlap": 0}


def stage_tokenize(run: Run) -> dict:
    out = _fresh_dir(run.p("timelines"))
    (out / "full").mkdir()
    (out / "24h").mkdir()
    vocab = Vocabulary.load(run.p("vocab", "vocab.json"))
    binner = DecileBinner.load(run.p("vocab", "deciles.json"))
    max_len = run.cfg.raw["tokenizer"]["max_len"]
    info = {}
    for site in run.sites:
        bundle = run.bundle(site)
        outcomes = run.outcome_frame(site)
        split_of = run.splits(site).hospitalization_splits(bundle)
        timelines = tokenize_bundle(bundle, vocab, binner, outcomes)
        for split in SPLITS:
            part = [tl for tl in timelines if split_of[tl.hospitalization_id] == split]
            if site == run.source:
                save_timelines(part, out / "full" / f"{site}_{split}.jsonl")
            short = [truncate_24h(tl, max_len) for tl in part]
            save_timelines(short, out / "24h" / f"{site}_{split}.jsonl")
            info[f"{site}_{split}"] = {
                "stays": len(part),
                "mean_len": float(np.mean([len(t) for t in part])) if part else None,
                "mean_len_24h": float(np.mean([len(t) for t in short])) if short else None,
            }
    return info


def stage_pretrain(run: Run) -> dict:
    vocab = Vocabulary.load(run.p("vocab", "vocab.json"))
    train = run.timelines(run.source, "train", "full")
    val = run.timelines(run.source, "val", "full")
    mcfg = ModelConfig(vocab_size=len(vocab), seed=run.seed, **run.cfg.raw["model"])
    sched = TrainSchedule(seed=run.seed, pad_gap_max=run.cfg.raw["tokenizer"]["pad_gap_max"],
                          **run.cfg.raw["pretrain"])
    ckpt_dir = _fresh_dir(run.p("models", "checkpoints"))

    def on_checkpoint(step, model):
        save_checkpoint(ckpt_dir / f"step{step:06d}.ckpt", model, metadata={"step": step})

    result = pretrain(train, mcfg, sched, val or None, on_checkpoint=on_checkpoint)
    meta = {"seed": run.seed, "schedule": sched.to_json(), "val_nll": result.val_nll,
            "steps": len(result.log)}
    save_checkpoint(run.p("models", "pretrained.ckpt"), result.model, metadata=meta)
    write_training_log(result.log, run.p("models", "train_log.csv"))
    from ..seqmodel import unigram_entropy
    baseline = unigram_entropy(val) if val else float("nan")
    write_json(run.p("reports", "pretrain.json"),
               {"seed": run.seed, "val_nll": result.val_nll, "unigram_entropy": baseline,
                "steps": len(result.log)})
    return {"val_nll": result.val_nll, "unigram_entropy": baseline,
            "leakage": [check_leakage(run, [t.hospitalization_id for t in train + val],
                                      "pretrain")]}


def stage_extract(run: Run) -> dict:
    out = _fresh_dir(run.p("reps"))
    model = run.base_model()
    info = {}
    for site in run.sites:
        for split in SPLITS:
            tls = run.timelines(site, split)
            X = encode(model, tls) if tls else np.zeros((0, model.config.d_model))
            np.save(out / f"{site}_{split}.npy", X)
            write_json(out / f"{site}_{split}_ids.json", [t.hospitalization_id for t in tls])
            info[f"{site}_{split}"] = int(X.shape[0])
    return info


def stage_forest(run: Run) -> dict:
    out = _fresh_dir(run.p("forest"))
    (out / "scores").mkdir()
    fc = run.cfg.raw["forest"]
    ids, X = run.reps(run.source, "train")
    forest = anomaly.fit_forest(X, fc["n_trees"], fc["psi"], seed=run.seed)
    if fc.get("contamination"):
        threshold = anomaly.contamination_threshold(anomaly.anomaly_score(forest, X),
                                                    fc["contamination"])
    else:
        threshold = float(fc["threshold"])
    anomaly.save_forest(forest, out / "forest.json", threshold)
    info = {"threshold": threshold, "outlier_fraction": {}}
    for site in run.sites:
        for split in SPLITS:
            sids, S = run.reps(site, split)
            scores = anomaly.anomaly_score(forest, S) if len(sids) else np.zeros(0)
            flags = anomaly.label_outliers(scores, threshold)
            anomaly.write_scores(out / "scores" / f"{site}_{split}.csv", sids, scores, flags)
            info["outlier_fraction"][f"{site}_{split}"] = float(flags.mean()) if len(flags) else None
    info["leakage"] = [check_leakage(run, ids, "forest")]
    return info


def _rep_design(run: Run, site, splits):
    ids, mats = [], []
    for split in splits:
        i, X = run.reps(site, split)
        ids += i
        mats.append(X)
    return ids, np.vstack(mats)


def _labels_for(run: Run, site, ids, outcome):
    frame = run.outcome_frame(site).reindex(ids)
    from ..clif import outcome_target
    return outcome_target(frame, outcome)


def stage_classify_rep(run: Run) -> dict:
    ids, X = _rep_design(run, run.source, ("train", "val"))
    models, leakage = {}, [check_leakage(run, ids, "classify-rep")]
    for outcome in run.outcomes:
        y, keep = _labels_for(run, run.source, ids, outcome)
        models[outcome] = fit_rep_lr(X[keep], y[keep])
    write_json(run.p("models", "rep_lr.json"), {"seed": run.seed, "models": models})

    report = {}
    for site in run.sites:
        tids, T = run.reps(site, "test")
        tls = run.timelines(site, "test")
        scores = {o: add_intercept(T) @ np.r_[models[o]["intercept"], models[o]["coef"]]
                  for o in run.outcomes}
        report[site] = _grid(scores, tls, run.flags(site, "test"))
    write_json(run.p("reports", "rep_lr.json"), {"seed": run.seed, "grid": report})

    # mortality classifier on representations of uniformly truncated prefixes
    if MORTALITY in run.outcomes:
        rng = np.random.default_rng(stage_seed(run.seed, "lr_urt"))
        train = run.timelines(run.source, "train")
        lr_urt = lr_urt_train(run.base_model(), train, rng)
        leakage.append(check_leakage(run, [t.hospitalization_id for t in train], "lr_urt"))
        write_json(run.p("models", "lr_urt.json"), {"seed": run.seed, **lr_urt})
    return {"leakage": leakage}


def lr_urt_train(model, timelines, rng: np.random.Generator) -> dict:
    """Mortality logit on one uniformly truncated prefix representation per stay."""
    prefixes = [uniform_random_truncate(tl, rng) for tl in timelines]
    y, _ = outcome_labels(timelines, MORTALITY)
    fit = fit_rep_lr(encode(model, prefixes), y)
    return {**fit, "prefix_lengths": [len(p) for p in prefixes]}


RANK_TOL = 1e-6


def fit_rep_lr(X, y) -> dict:
    """Unpenalized logit on representations, fitted in their non-degenerate subspace.

    Final-norm hidden states are nearly collinear with the intercept, so the
    design is first centered and projected onto principal directions whose
    singular value exceeds ``RANK_TOL`` times the largest. Coefficients are
    mapped back to the original coordinates.
    """
    X = np.asarray(X, dtype=float)
    mu = X.mean(axis=0)
    _, sv, vt = np.linalg.svd(X - mu, full_matrices=False)
    keep = sv > RANK_TOL * sv[0]
    P = vt[keep].T / sv[keep] * math.sqrt(X.shape[0])
    fit = fit_logit_mle(add_intercept((X - mu) @ P), np.asarray(y).astype(int), inference=False)
    w = P @ fit.coef[1:]
    return {"coef": w.tolist(), "intercept": float(fit.coef[0] - mu @ w),
            "rank": int(keep.sum()), "converged": fit.converged, "nobs": fit.nobs}


def _ft_kwargs(section: dict) -> dict:
    return {k: section[k] for k in ("lr", "epochs", "batch_size", "warmup_steps") if k in section}


def _evaluate_heads(run: Run, heads: dict, sites) -> dict:
    """AUC grids for a {outcome: (model, head)} mapping on the test sets of ``sites``."""
    report = {}
    for site in sites:
        tls = run.timelines(site, "test")
        scores = {o: predict_proba(m, h, tls) for o, (m, h) in heads.items()}
        report[site] = _grid(scores, tls, run.flags(site, "test"))
    return report


def stage_finetune(run: Run) -> dict:
    out = _fresh_dir(run.p("models", "sft"))
    base = run.base_model()
    train = run.timelines(run.source, "train")
    section = run.cfg.raw["finetune"]
    probes = read_json(run.p("models", "rep_lr.json"))["models"] \
        if section.get("init_from_probe") else {}
    heads = {}
    for i, outcome in enumerate(run.outcomes):
        head = None
        if outcome in probes:
            head = head_from_coefficients(probes[outcome]["coef"], probes[outcome]["intercept"])
        model, head = finetune_classifier(base, train, outcome, mode="plain", head=head,
                                          seed=stage_seed(run.seed, f"sft-{outcome}"),
                                          **_ft_kwargs(section))
        save_checkpoint(out / f"{outcome}.ckpt", model, head, {"outcome": outcome,
                                                               "seed": run.seed})
        heads[outcome] = (model, head)
    write_json(run.p("reports", "sft.json"),
               {"seed": run.seed, "grid": _evaluate_heads(run, heads, run.sites)})
    return {"leakage": [check_leakage(run, [t.hospitalization_id for t in train], "finetune")]}


def stage_finetune_urt(run: Run) -> dict:
    base = run.base_model()
    train = run.timelines(run.source, "train")
    section = run.cfg.raw["finetune_urt"]
    probes = read_json(run.p("models", "rep_lr.json"))["models"] \
        if run.cfg.raw["finetune"].get("init_from_probe") else {}
    head = None
    if MORTALITY in probes:
        head = head_from_coefficients(probes[MORTALITY]["coef"], probes[MORTALITY]["intercept"])
    model, head = finetune_classifier(base, train, MORTALITY, mode="urt", head=head,
                                      seed=stage_seed(run.seed, "sft-urt"),
                                      **_ft_kwargs(section))
    save_checkpoint(run.p("models", "sft_urt.ckpt"), model, head,
                    {"outcome": MORTALITY, "mode": "urt", "seed": run.seed})
    write_json(run.p("reports", "sft_urt.json"),
               {"seed": run.seed, "grid": _evaluate_heads(run, {MORTALITY: (model, head)},
                                                           run.sites)})
    return {"leakage": [check_leakage(run, [t.hospitalization_id for t in train], "finetune-urt")]}


def stage_finetune_local(run: Run) -> dict:
    out = _fresh_dir(run.p("models", "local"))
    section = run.cfg.raw["finetune_local"]
    train = run.timelines(run.target, "train")
    val = run.timelines(run.target, "val")
    heads, search = {}, {}
    for outcome in run.outcomes:
        model, head, _ = load_checkpoint(run.p("models", "sft", f"{outcome}.ckpt"))
        model, head, chosen, records = local_finetune(
            model, head, train, val, outcome, section["search_space"], mode=section["mode"],
            seed=stage_seed(run.seed, f"local-{outcome}"),
            batch_size=section.get("batch_size", 16))
        save_checkpoint(out / f"{outcome}.ckpt", model, head,
                        {"outcome": outcome, "chosen": chosen, "seed": run.seed})
        heads[outcome] = (model, head)
        search[outcome] = {"chosen": chosen, "candidates": records}
    write_json(run.p("reports", "local_sft.json"),
               {"seed": run.seed, "grid": _evaluate_heads(run, heads, [run.target]),
                "search": search})
    fit_ids = [t.hospitalization_id for t in train + val]
    return {"leakage": [check_leakage(run, fit_ids, "finetune-local")]}


def stage_dynamics(run: Run) -> dict:
    out = _fresh_dir(run.p("reports", "dynamics"))
    model = run.base_model()
    results = {}
    for site in run.sites:
        tls = run.timelines(site, "test")
        trajectories = [None] * len(tls)
        for i, H in hidden_states(model, tls):
            trajectories[i] = H
        flags = run.flags(site, "test")
        ids = [t.hospitalization_id for t in tls]
        features = feature_table(ids, trajectories, flags["score"].reindex(ids).to_numpy())
        features.to_csv(out / f"{site}_features.csv")
        outcomes = run.outcome_frame(site)
        fits, text = {}, []
        for outcome in run.outcomes:
            fit = dynamics_regression(features, outcomes, outcome)
            fits[outcome] = fit.to_json()
            text.append(fit.summary(title=f"{site}: {outcome}", dep_var=outcome))
        write_json(out / f"{site}.json", {"seed": run.seed, "fits": fits})
        (out / f"{site}.txt").write_text("\n".join(text))
        results[site] = {o: f["coefficients"]["Maximum Jump"]["formatted"] for o, f in fits.items()}
    return results


def stage_curves(run: Run) -> dict:
    out = _fresh_dir(run.p("reports", "curves"))
    if MORTALITY not in run.outcomes:
        warnings.warn("mortality is not among the outcomes; no curves written", RuntimeWarning)
        return {}
    tls = run.timelines(run.source, "test")
    y, _ = outcome_labels(tls, MORTALITY)
    n = run.cfg.raw["curves"]["n_per_class"]
    seed = stage_seed(run.seed, "curves")

    sft_model, sft_head, _ = load_checkpoint(run.p("models", "sft", f"{MORTALITY}.ckpt"))
    urt_model, urt_head, _ = load_checkpoint(run.p("models", "sft_urt.ckpt"))
    base = run.base_model()
    lr = read_json(run.p("models", "lr_urt.json"))
    w, b = np.asarray(lr["coef"]), lr["intercept"]

    def lr_urt_predictor(batch):
        out_ = [None] * len(batch)
        for i, H in hidden_states(base, batch):
            out_[i] = 1.0 / (1.0 + np.exp(-(H @ w + b)))
        return out_

    predictors = {
        "sft": lambda batch: prefix_probabilities(sft_model, sft_head, batch),
        "sft_urt": lambda batch: prefix_probabilities(urt_model, urt_head, batch),
        "lr_urt": lr_urt_predictor,
    }
    for name, fn in predictors.items():
        curves = realtime_curves(fn, tls, y, n_per_class=n, seed=seed)
        curves.to_csv(out / f"{name}.csv", index=False, float_format="%.10g")
    return {"n_per_class": n}


def stage_pca(run: Run) -> dict:
    out = _fresh_dir(run.p("reports", "pca"))
    vocab = Vocabulary.load(run.p("vocab", "vocab.json"))
    E = run.base_model().embed.weight.detach().double().numpy()
    info = {}
    for name, rows in (("tokens", np.arange(len(vocab))),
                       ("deciles", np.arange(DECILE_OFFSET, DECILE_OFFSET + N_DECILES))):
        proj, var = pca_2d(E[rows])
        pd.DataFrame({"token_id": rows, "token": [vocab.tokens[i] for i in rows],
                      "pc1": proj[:, 0], "pc2": proj[:, 1]}) \
            .to_csv(out / f"{name}.csv", index=False, float_format="%.10g")
        info[name] = {"explained_variance": var.tolist()}
    from scipy.stats import spearmanr
    dec = pd.read_csv(out / "deciles.csv")
    info["decile_pc1_spearman"] = float(spearmanr(dec["pc1"], np.arange(N_DECILES)).correlation)
    write_json(out / "summary.json", info)
    return info


def stage_summarize(run: Run) -> dict:
    out = run.p("reports", "cohort")
    _fresh_dir(out)
    for site in run.sites:
        bundle = run.bundle(site)
        flags, lengths = {}, {}
        for split in SPLITS:
            f = run.flags(site, split)
            flags.update(f["flag"].to_dict())
            lengths.update({t.hospitalization_id: len(t) for t in run.timelines(site, split)})
        summary = summarize_cohort(bundle, run.splits(site), run.outcome_frame(site), flags, lengths)
        write_json(out / f"{site}.json", {"seed": run.seed, "summary": summary})
    return {}


REPORT_PARTS = ("pretrain.json", "rep_lr.json", "sft.json", "sft_urt.json", "local_sft.json")


def stage_report(run: Run) -> dict:
    reports = run.p("reports")
    # the output location is not a run parameter; leaving it out keeps reruns byte-identical
    config = {k: v for k, v in run.cfg.to_json().items() if k != "out"}
    bundle = {"seed": run.seed, "config": config, "sites": run.sites}
    for part in REPORT_PARTS:
        bundle[part[:-5]] = read_json(reports / part)
    frames = []
    for key, label in (("rep_lr", "representation_lr"), ("sft", "sft"),
                       ("local_sft", "local_sft")):
        for site, grid in bundle[key]["grid"].items():
            df = report_frame(grid, site)
            df.insert(0, "model", label)
            frames.append(df)
    pd.concat(frames, ignore_index=True).to_csv(reports / "auc_grids.csv", index=False,
                                                float_format="%.10g")
    bundle["dynamics"] = {site: read_json(reports / "dynamics" / f"{site}.json")
                          for site in run.sites}
    bundle["cohort"] = {site: read_json(reports / "cohort" / f"{site}.json")
                        for site in run.sites}
    bundle["pca"] = read_json(reports / "pca" / "summary.json")
    manifest = Manifest(run.root)
    bundle["leakage"] = {name: entry.get("info", {}).get("leakage", [])
                         for name, entry in sorted(manifest.stages.items())
                         if entry.get("info", {}).get("leakage")}
    write_json(reports / "report.json", bundle)
    return {}


# ---------------------------------------------------------------- registry

@dataclasses.dataclass(frozen=True)
class Stage:
    name: str
    fn: Callable[[Run], dict]
    inputs: Callable[[Run], list]
    outputs: Callable[[Run], list]


def _raw_inputs(run):
    paths = []
    for role in ROLES:
        site = run.cfg.site(role)
        if "directory" in site:
            paths.append(run.cfg.resolve(site["directory"]))
        else:
            paths.append(run.p("raw", site["name"]))
    return paths


STAGES: list[Stage] = [
    Stage("synth", stage_synth, lambda r: [],
          lambda r: [r.p("raw", r.cfg.site_name(x)) for x in ROLES if "synth" in r.cfg.site(x)]),
    Stage("ingest", stage_ingest, _raw_inputs, lambda r: [r.p("cohort")]),
    Stage("split", stage_split, lambda r: [r.p("cohort")], lambda r: [r.p("splits")]),
    Stage("vocab", stage_vocab, lambda r: [r.p("cohort"), r.p("splits")],
          lambda r: [r.p("vocab")]),
    Stage("tokenize", stage_tokenize, lambda r: [r.p("cohort"), r.p("splits"), r.p("vocab")],
          lambda r: [r.p("timelines")]),
    Stage("pretrain", stage_pretrain, lambda r: [r.p("vocab"), r.p("timelines")],
          lambda r: [r.p("models", "pretrained.ckpt"), r.p("models", "train_log.csv"),
                     r.p("models", "checkpoints"), r.p("reports", "pretrain.json")]),
    Stage("extract", stage_extract, lambda r: [r.p("models", "pretrained.ckpt"), r.p("timelines")],
          lambda r: [r.p("reps")]),
    Stage("forest", stage_forest, lambda r: [r.p("reps")], lambda r: [r.p("forest")]),
    Stage("classify-rep", stage_classify_rep,
          lambda r: [r.p("reps"), r.p("forest"), r.p("cohort"), r.p("timelines"),
                     r.p("models", "pretrained.ckpt")],
          lambda r: [r.p("models", "rep_lr.json"), r.p("reports", "rep_lr.json")]
          + ([r.p("models", "lr_urt.json")] if MORTALITY in r.outcomes else [])),
    Stage("finetune", stage_finetune,
          lambda r: [r.p("models", "pretrained.ckpt"), r.p("timelines"), r.p("forest"),
                     r.p("models", "rep_lr.json")],
          lambda r: [r.p("models", "sft"), r.p("reports", "sft.json")]),
    Stage("finetune-urt", stage_finetune_urt,
          lambda r: [r.p("models", "pretrained.ckpt"), r.p("timelines"), r.p("forest"),
                     r.p("models", "rep_lr.json")],
          lambda r: [r.p("models", "sft_urt.ckpt"), r.p("reports", "sft_urt.json")]),
    Stage("finetune-local", stage_finetune_local,
          lambda r: [r.p("models", "sft"), r.p("timelines"), r.p("forest")],
          lambda r: [r.p("models", "local"), r.p("reports", "local_sft.json")]),
    Stage("dynamics", stage_dynamics,
          lambda r: [r.p("models", "pretrained.ckpt"), r.p("timelines"), r.p("forest"),
                     r.p("cohort")],
          lambda r: [r.p("reports", "dynamics")]),
    Stage("curves", stage_curves,
          lambda r: [r.p("models", "sft"), r.p("models", "sft_urt.ckpt"),
                     r.p("models", "lr_urt.json"), r.p("models", "pretrained.ckpt"),
                     r.p("timelines")],
          lambda r: [r.p("reports", "curves")]),
    Stage("pca", stage_pca, lambda r: [r.p("models", "pretrained.ckpt"), r.p("vocab")],
          lambda r: [r.p("reports", "pca")]),
    Stage("summarize", stage_summarize,
          lambda r: [r.p("cohort"), r.p("splits"), r.p("forest"), r.p("timelines")],
          lambda r: [r.p("reports", "cohort")]),
    Stage("report", stage_report,
          lambda r: [r.p("reports", p) for p in REPORT_PARTS]
          + [r.p("reports", "dynamics"), r.p("reports", "cohort"), r.p("reports", "pca")],
          lambda r: [r.p("reports", "report.json"), r.p("reports", "auc_grids.csv")]),
]
STAGE_NAMES = [s.name for s in STAGES]
_BY_NAME = {s.name: s for s in STAGES}


def run_stage(cfg: RunConfig, name: str, force: bool = False) -> dict:
    """Run one stage and record it in the manifest; returns the manifest entry."""
    if name not in _BY_NAME:
        raise KeyError(f"unknown stage {name!r}; choose from {STAGE_NAMES}")
    stage = _BY_NAME[name]
    run = Run(cfg, cfg.seed)
    run.root.mkdir(parents=True, exist_ok=True)
    manifest = Manifest(run.root)
    inputs, problems = manifest.check_inputs(stage.inputs(run))
    if problems and not force:
        raise StaleArtifactError("; ".join(problems) + " (use --force to run anyway)")
    torch.manual_seed(stage_seed(run.seed, name))
    start = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            info = stage.fn(run) or {}
        except Exception as exc:
            manifest.record_failure(name, exc)
            raise
    wall = time.perf_counter() - start
    messages = [f"forced despite stale input: {p}" for p in problems]
    messages += sorted({str(w.message) for w in caught})
    for m in messages:
        log.warning("%s: %s", name, m)
    outputs = {manifest.rel(p): hash_path(p) for p in stage.outputs(run) if Path(p).exists()}
    entry = {"inputs": inputs, "outputs": outputs, "wall_time_s": round(wall, 3),
             "seed": run.seed, "warnings": messages, "forced": bool(force and problems),
             "info": _clean(info)}
    manifest.record(name, entry)
    log.info("stage %s done in %.1fs", name, wall)
    return entry


def run_experiment(cfg: RunConfig, force: bool = False) -> dict:
    """Every stage in dependency order; returns the final manifest stages."""
    for stage in STAGES:
        run_stage(cfg, stage.name, force=force)
    return Manifest(cfg.out).stages


def report_hashes(root: Path) -> dict[str, str]:
    """Hashes of every file under ``reports/`` (the comparable output of a run)."""
    root = Path(root) / "reports"
    return {p.relative_to(root).as_posix(): hash_path(p)
            for p in sorted(root.rglob("*")) if p.is_file()}
