"""End-to-end run: prepare, estimate, evaluate, attribute, report."""

from __future__ import annotations

import csv
import json
import logging
import os
import shutil
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .attribution import beeswarm_rows, cate_shap, shap_summary
from .causal_forest import BootstrapCausalForest, cf_subsample
from .data import CsvSchema, load_csv, standardize, stratified_split
from .evaluation import capture_at, gain_curve, policy_simulate, qini, segment_by_interval
from .exceptions import ConfigError, UpliftError
from .gbdt import GradientBoostedTrees
from .meta_learners import SLearner, TLearner, XLearner
from .propensity import append_propensity, fit_propensity
from .synth import generate_dgp, preset

log = logging.getLogger(__name__)

MODEL_IDS = ("S", "T", "X", "CF")
TIMING_KEYS = ("timings",)


@dataclass
class RunConfig:
    """Every knob of a run. Serializes to and from a flat ``key = value`` file."""

    data: str = ""
    preset: str = ""
    n: int = 200_000
    features: str = ",".join(f"f{i}" for i in range(12))
    treatment_column: str = "treatment"
    visit_column: str = "visit"
    conversion_column: str = "conversion"
    outcome: str = "visit"
    test_fraction: float = 0.2
    seed: int = 42
    models: str = "S,T,X,CF"
    num_trees: int = 200
    learning_rate: float = 0.1
    max_leaves: int = 31
    min_samples_leaf: int = 20
    l2_reg: float = 1.0
    feature_subsample: float = 1.0
    max_bins: int = 255
    propensity_l2: float = 1.0
    cf_fraction: float = 0.1
    cf_replicates: int = 50
    cf_num_trees: int = 20
    cf_subsample_fraction: float = 0.5
    cf_honesty_fraction: float = 0.5
    cf_max_leaves: int = 64
    cf_min_treated_leaf: int = 25
    cf_min_control_leaf: int = 25
    grid_size: int = 100
    tie_policy: str = "shuffle"
    policy_fractions: str = "0.2,0.5"
    population: int = 1_000_000
    cost_per_contact: float = 1.0
    shap_rows: int = 2000
    output_dir: str = "out"

    @classmethod
    def from_mapping(cls, mapping):
        types = {f.name: f.type for f in fields(cls)}
        kw = {}
        for key, raw in mapping.items():
            key = key.strip().replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            if raw is None:
                continue
            typ = {"int": int, "float": float, "str": str}[types[key]]
            try:
                kw[key] = typ(raw) if not isinstance(raw, str) else typ(raw.strip())
            except ValueError:
                raise ConfigError(f"config key {key!r}: cannot read {raw!r} as {types[key]}") from None
        return cls(**kw).validate()

    @classmethod
    def read(cls, path):
        return cls.from_mapping(parse_config_text(Path(path).read_text(encoding="utf-8")))

    def to_text(self):
        return "".join(f"{k} = {v}\n" for k, v in asdict(self).items())

    @property
    def model_list(self):
        return [m.strip().upper() for m in self.models.split(",") if m.strip()]

    @property
    def fractions(self):
        return [float(x) for x in self.policy_fractions.split(",") if x.strip()]

    @property
    def schema(self):
        return CsvSchema(
            features=tuple(f.strip() for f in self.features.split(",")),
            treatment=self.treatment_column,
            visit=self.visit_column,
            conversion=self.conversion_column,
        )

    def gbdt(self):
        return GradientBoostedTrees(
            num_trees=self.num_trees,
            learning_rate=self.learning_rate,
            max_leaves=self.max_leaves,
            min_samples_leaf=self.min_samples_leaf,
            l2_reg=self.l2_reg,
            feature_subsample=self.feature_subsample,
            seed=self.seed,
            max_bins=self.max_bins,
        )

    def forest(self):
        return BootstrapCausalForest(
            n_replicates=self.cf_replicates,
            num_trees=self.cf_num_trees,
            subsample_fraction=self.cf_subsample_fraction,
            honesty_fraction=self.cf_honesty_fraction,
            max_leaves=self.cf_max_leaves,
            min_treated_leaf=self.cf_min_treated_leaf,
            min_control_leaf=self.cf_min_control_leaf,
            seed=self.seed,
        )

    def validate(self):
        if bool(self.data) == bool(self.preset):
            raise ConfigError("exactly one of 'data' and 'preset' must be set")
        if not 0 < self.test_fraction < 1:
            raise ConfigError(f"test_fraction must lie in (0, 1), got {self.test_fraction}")
        if self.outcome not in ("visit", "conversion"):
            raise ConfigError(f"outcome must be 'visit' or 'conversion', got {self.outcome!r}")
        unknown = set(self.model_list) - set(MODEL_IDS)
        if unknown or not self.model_list:
            raise ConfigError(f"models must be a non-empty subset of {MODEL_IDS}, got {self.models!r}")
        if self.tie_policy not in ("shuffle", "average"):
            raise ConfigError(f"tie_policy must be 'shuffle' or 'average', got {self.tie_policy!r}")
        if self.grid_size < 10:
            raise ConfigError(f"grid_size must be at least 10, got {self.grid_size}")
        try:
            fr = self.fractions
        except ValueError:
            raise ConfigError(f"policy_fractions must be comma-separated reals, got {self.policy_fractions!r}") from None
        if not fr or any(not 0 < f <= 1 for f in fr):
            raise ConfigError(f"policy_fractions must lie in (0, 1], got {self.policy_fractions!r}")
        if not 0 < self.cf_fraction <= 1:
            raise ConfigError(f"cf_fraction must lie in (0, 1], got {self.cf_fraction}")
        if self.cf_replicates < BootstrapCausalForest.MIN_REPLICATES:
            raise ConfigError(f"cf_replicates must be at least {BootstrapCausalForest.MIN_REPLICATES}")
        if self.population < 1 or self.n < 2 or self.shap_rows < 1:
            raise ConfigError("population, n and shap_rows must be positive")
        return self


def parse_config_text(text):
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


class StageError(UpliftError):
    """A module error annotated with the pipeline stage that raised it."""

    def __init__(self, stage, cause):
        self.stage, self.cause = stage, cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


class _Stages:
    def __init__(self):
        self.timings = {}

    def __call__(self, name, fn, *args, **kwargs):
        log.info("stage %s", name)
        t0 = time.perf_counter()
        try:
            return fn(*args, **kwargs)
        except StageError:
            raise
        except UpliftError as exc:
            raise StageError(name, exc) from exc
        finally:
            self.timings[name] = round(time.perf_counter() - t0, 4)


@dataclass
class Prepared:
    dataset: object
    truth: object
    split: object
    scaling: object
    train: object
    test: object
    train_p: object
    test_p: object
    propensity: object


def load_dataset(cfg):
    if cfg.preset:
        return generate_dgp(preset(cfg.preset, cfg.n, seed=cfg.seed))
    return load_csv(cfg.data, cfg.schema, cfg.outcome), None


def prepare(cfg, stages=None):
    """Preprocessing and propensity steps: split, standardize, fit e(x)."""
    stages = stages or _Stages()
    ds, truth = stages("load", load_dataset, cfg)
    split = stages("split", stratified_split, ds, cfg.test_fraction, cfg.seed)
    scaling, z = stages("standardize", standardize, ds, split.train)
    train, test = z.take(split.train), z.take(split.test)
    rep = stages("propensity", fit_propensity, train, test, cfg.propensity_l2)
    train_p = append_propensity(train, rep.model)
    test_p = append_propensity(test, rep.model)
    return Prepared(ds, truth, split, scaling, train, test, train_p, test_p, rep)


def fit_models(cfg, prep, stages=None):
    """Fit every enabled estimator on the training split."""
    stages = stages or _Stages()
    tr = prep.train_p
    models = {}
    for mid in cfg.model_list:
        if mid == "S":
            models[mid] = stages("fit_S", SLearner(cfg.gbdt()).fit, tr.features, tr.treatment, tr.outcome)
        elif mid == "T":
            models[mid] = stages("fit_T", TLearner(cfg.gbdt()).fit, tr.features, tr.treatment, tr.outcome)
        elif mid == "X":
            models[mid] = stages(
                "fit_X", XLearner(cfg.gbdt(), cfg.propensity_l2).fit,
                tr.features, tr.treatment, tr.outcome, prep.propensity.model,
            )
        else:
            sub = stages("cf_subsample", cf_subsample, prep.train, cfg.cf_fraction, cfg.seed)
            models[mid] = stages("fit_CF", cfg.forest().fit, sub.features, sub.treatment, sub.outcome)
    return models


def predict_models(models, prep):
    """Test-set CATE per model (and the causal forest's intervals)."""
    out, intervals = {}, None
    for mid, model in models.items():
        if mid == "CF":
            intervals = model.predict_interval(prep.test.features)
            out[mid] = intervals.tau_hat
        else:
            out[mid] = model.predict(prep.test_p.features)
    return out, intervals


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _fmt(x):
    return repr(float(x))


def run_pipeline(cfg):
    """Run every step and write all outputs under ``cfg.output_dir``.

    Outputs are staged in a scratch directory and only moved into place when
    the run succeeds, so a failed run leaves nothing behind.
    """
    cfg.validate()
    stages = _Stages()
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".partial-", dir=out_dir))
    try:
        report = _run(cfg, stages, staging)
        for item in staging.iterdir():
            os.replace(item, out_dir / item.name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    return report


def _run(cfg, stages, out):
    t_start = time.perf_counter()
    prep = prepare(cfg, stages)
    models = fit_models(cfg, prep, stages)
    tau_hat, intervals = stages("predict", predict_models, models, prep)
    test_idx = prep.split.test

    report = {
        "config": asdict(cfg),
        "data": {
            "n": prep.dataset.n,
            "d": prep.dataset.d,
            "n_train": int(prep.split.train.size),
            "n_test": int(test_idx.size),
            "treated_share": float(prep.dataset.treatment.mean()),
            "outcome_rate": float(prep.dataset.outcome.mean()),
        },
        "gbdt_params": asdict(cfg.gbdt().params),
        "propensity": prep.propensity.to_dict(),
        "models": {},
    }
    curves = {}
    for mid, th in tau_hat.items():
        curve = stages(f"evaluate_{mid}", gain_curve, th, prep.test.treatment, prep.test.outcome,
                       cfg.grid_size, cfg.tie_policy, cfg.seed)
        curves[mid] = curve
        entry = {
            "cate_mean": float(np.mean(th)),
            "cate_std": float(np.std(th)),
            "qini": qini(curve, mid).qini,
            "capture_at_0.2": capture_at(curve, 0.2),
            "capture_at_0.5": capture_at(curve, 0.5),
            "imputed_grid_points": int(curve.imputed.sum()),
        }
        if prep.truth is not None:
            true_tau = prep.truth.tau[test_idx]
            if np.std(th) > 0 and np.std(true_tau) > 0:
                entry["tau_correlation"] = float(np.corrcoef(th, true_tau)[0, 1])
        report["models"][mid] = entry
        _write_csv(out / f"cate_{mid}.csv", ["index", "tau_hat"], zip(test_idx.tolist(), map(_fmt, th)))
        _write_csv(out / f"gain_{mid}.csv", ["phi", "gain"], ((_fmt(p), _fmt(g)) for p, g in curve.to_rows()))
    report["tie_policy"] = {"policy": cfg.tie_policy, "seed": cfg.seed if cfg.tie_policy == "shuffle" else None}

    best = max(report["models"], key=lambda m: (report["models"][m]["qini"], -MODEL_IDS.index(m)))
    policy = policy_simulate(curves[best], cfg.population, cfg.cost_per_contact, cfg.fractions, label=best)
    report["policy"] = {"model": best, **policy.to_dict()}

    if intervals is not None:
        seg = segment_by_interval(intervals)
        report["segmentation"] = seg.to_dict()
        _write_csv(
            out / "intervals_cf.csv",
            ["index", "tau_hat", "lower", "upper"],
            ((i, _fmt(a), _fmt(b), _fmt(c)) for i, (a, b, c) in zip(test_idx.tolist(), intervals.to_rows())),
        )

    if "T" in models:
        rows = min(cfg.shap_rows, prep.test_p.n)
        Xs = prep.test_p.features[:rows]
        shap = stages("attribute", cate_shap, models["T"], Xs)
        names = prep.test_p.feature_names
        ranking = shap_summary(shap, names)
        report["attribution"] = {
            "model": "T",
            "target": shap.target,
            "scale": "log-odds margin (mu1 minus mu0)",
            "rows": rows,
            "base_value": shap.base_value,
            "ranking": [{"feature": f, "mean_abs_shap": v} for f, v in ranking],
        }
        _write_csv(out / "shap_summary.csv", ["feature", "mean_abs_shap"], ((f, _fmt(v)) for f, v in ranking))
        _write_csv(
            out / "shap_beeswarm.csv",
            ["row", "feature", "shap", "feature_value"],
            ((int(test_idx[r]), f, _fmt(s), _fmt(v)) for r, f, s, v in beeswarm_rows(shap, Xs, names)),
        )

    stages.timings["total"] = round(time.perf_counter() - t_start, 4)
    report["timings"] = dict(stages.timings)
    (out / "resolved_config.txt").write_text(cfg.to_text(), encoding="utf-8")
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    return report


def canonical_report(report):
    """The report without wall-clock fields, for determinism comparisons."""
    return {k: v for k, v in report.items() if k not in TIMING_KEYS}
