"""Command line entry point.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric or
evaluation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import shutil
import sys
import tempfile
from dataclasses import fields
from pathlib import Path

import numpy as np

from .attribution import beeswarm_rows, cate_shap, shap_summary
from .causal_forest import BootstrapCausalForest, CateInterval
from .evaluation import GainCurve, capture_at, gain_curve, policy_simulate, qini, segment_by_interval
from .exceptions import ConfigError, DataError, UpliftError
from .meta_learners import SLearner, TLearner, XLearner
from .pipeline import (
    RunConfig,
    _fmt,
    _write_csv,
    fit_models,
    load_dataset,
    parse_config_text,
    predict_models,
    prepare,
    run_pipeline,
)
from .synth import generate_dgp, preset, write_ground_truth
from .data import write_csv

log = logging.getLogger("upliftkit")

_MODEL_CLASSES = {"S": SLearner, "T": TLearner, "X": XLearner, "CF": BootstrapCausalForest}


def _add_config_flags(p):
    p.add_argument("--config", help="flat 'key = value' config file; flags override it")
    for f in fields(RunConfig):
        p.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar=f.type.upper())


def _resolve_config(args):
    mapping = {}
    if args.config:
        try:
            mapping.update(parse_config_text(Path(args.config).read_text(encoding="utf-8")))
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from None
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            mapping[f.name] = v
    return RunConfig.from_mapping(mapping)


def _read_table(path, required):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.DictReader(fh))
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    if not rows:
        raise DataError(f"{path}: no data rows")
    missing = [c for c in required if c not in rows[0]]
    if missing:
        raise DataError(f"{path}: missing column(s) {missing}")
    try:
        return {c: np.array([float(r[c]) for r in rows]) for c in required}
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from None


def _emit(obj, out=None):
    text = json.dumps(obj, indent=2)
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text + "\n", encoding="utf-8")
    print(text)


def cmd_synth_gen(args):
    spec = preset(args.preset, args.n, seed=args.seed)
    ds, truth = generate_dgp(spec)
    out = Path(args.out)
    truth_path = Path(args.truth) if args.truth else out.with_name(out.stem + "_truth.csv")
    write_csv(ds, out)
    write_ground_truth(truth, truth_path)
    print(f"wrote {ds.n} rows to {out} and ground truth to {truth_path}")


def cmd_train(args):
    cfg = _resolve_config(args)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    staging = Path(tempfile.mkdtemp(prefix=".partial-", dir=out_dir))
    try:
        prep = prepare(cfg)
        models = fit_models(cfg, prep)
        tau_hat, intervals = predict_models(models, prep)
        (staging / "models").mkdir()
        for mid, model in models.items():
            (staging / "models" / f"{mid}.json").write_text(json.dumps(model.to_dict()), encoding="utf-8")
            _write_csv(staging / f"cate_{mid}.csv", ["index", "tau_hat"],
                       zip(prep.split.test.tolist(), map(_fmt, tau_hat[mid])))
        if intervals is not None:
            _write_csv(staging / "intervals_cf.csv", ["index", "tau_hat", "lower", "upper"],
                       ((i, _fmt(a), _fmt(b), _fmt(c)) for i, (a, b, c) in zip(prep.split.test.tolist(), intervals.to_rows())))
        (staging / "propensity.json").write_text(json.dumps(prep.propensity.to_dict()), encoding="utf-8")
        (staging / "split.json").write_text(
            json.dumps({"train": prep.split.train.tolist(), "test": prep.split.test.tolist()}), encoding="utf-8"
        )
        (staging / "resolved_config.txt").write_text(cfg.to_text(), encoding="utf-8")
        for item in staging.iterdir():
            dest = out_dir / item.name
            if dest.is_dir():
                shutil.rmtree(dest)
            os.replace(item, dest)
    finally:
        shutil.rmtree(staging, ignore_errors=True)
    print(f"trained {', '.join(models)}; outputs in {out_dir}")


def cmd_evaluate(args):
    cfg = _resolve_config(args)
    ds, _ = load_dataset(cfg)
    out_dir = Path(cfg.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = {}
    for path in args.cate:
        tab = _read_table(path, ["index", "tau_hat"])
        idx = tab["index"].astype(np.int64)
        if idx.min() < 0 or idx.max() >= ds.n:
            raise DataError(f"{path}: record index outside 0..{ds.n - 1}")
        mid = Path(path).stem.removeprefix("cate_")
        curve = gain_curve(tab["tau_hat"], ds.treatment[idx], ds.outcome[idx], cfg.grid_size, cfg.tie_policy, cfg.seed)
        _write_csv(out_dir / f"gain_{mid}.csv", ["phi", "gain"], ((_fmt(p), _fmt(g)) for p, g in curve.to_rows()))
        results[mid] = {
            "qini": qini(curve, mid).qini,
            "capture_at_0.2": capture_at(curve, 0.2),
            "capture_at_0.5": capture_at(curve, 0.5),
            "cate_mean": float(tab["tau_hat"].mean()),
            "cate_std": float(tab["tau_hat"].std()),
        }
    _emit(results, out_dir / "evaluation.json")


def cmd_simulate_policy(args):
    tab = _read_table(args.gain, ["phi", "gain"])
    curve = GainCurve(tab["phi"], tab["gain"], float("nan"), np.zeros(tab["phi"].size, dtype=bool))
    try:
        fractions = [float(x) for x in args.fractions.split(",")]
    except ValueError:
        raise ConfigError(f"--fractions must be comma-separated reals, got {args.fractions!r}") from None
    rep = policy_simulate(curve, args.population, args.cost_per_contact, fractions, label=args.label)
    _emit(rep.to_dict(), args.out)


def cmd_segment(args):
    tab = _read_table(args.intervals, ["tau_hat", "lower", "upper"])
    seg = segment_by_interval(CateInterval(tab["tau_hat"], tab["lower"], tab["upper"]))
    _emit(seg.to_dict(), args.out)


def cmd_attribute(args):
    run_dir = Path(args.run_dir)
    cfg_path = run_dir / "resolved_config.txt"
    model_path = run_dir / "models" / "T.json"
    if not cfg_path.exists() or not model_path.exists():
        raise ConfigError(f"{run_dir} is not a train output directory with a T-learner")
    cfg = RunConfig.read(cfg_path)
    prep = prepare(cfg)
    model = TLearner.from_dict(json.loads(model_path.read_text(encoding="utf-8")))
    rows = min(args.rows or cfg.shap_rows, prep.test_p.n)
    X = prep.test_p.features[:rows]
    shap = cate_shap(model, X)
    names = prep.test_p.feature_names
    ranking = shap_summary(shap, names)
    test_idx = prep.split.test
    _write_csv(run_dir / "shap_summary.csv", ["feature", "mean_abs_shap"], ((f, _fmt(v)) for f, v in ranking))
    _write_csv(
        run_dir / "shap_beeswarm.csv",
        ["row", "feature", "shap", "feature_value"],
        ((int(test_idx[r]), f, _fmt(s), _fmt(v)) for r, f, s, v in beeswarm_rows(shap, X, names)),
    )
    _emit({"scale": "log-odds margin", "ranking": [{"feature": f, "mean_abs_shap": v} for f, v in ranking]})


def cmd_run(args):
    cfg = _resolve_config(args)
    report = run_pipeline(cfg)
    for mid, m in report["models"].items():
        print(f"{mid:>2}  qini={m['qini']:.4f}  top20={m['capture_at_0.2']:.3f}  "
              f"mean={m['cate_mean']:.4f}  std={m['cate_std']:.4f}", flush=True)
    print(f"report: {Path(cfg.output_dir) / 'report.json'}")


def build_parser():
    parser = argparse.ArgumentParser(prog="upliftkit", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="write a synthetic dataset and its ground truth")
    p.add_argument("--preset", required=True)
    p.add_argument("--n", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="dataset CSV path")
    p.add_argument("--truth", help="ground-truth CSV path (default: <out>_truth.csv)")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("train", help="fit the enabled models and save them")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="gain curves and Qini for CATE score files")
    _add_config_flags(p)
    p.add_argument("--cate", action="append", required=True, help="CSV with index,tau_hat (repeatable)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate-policy", help="budget vs captured-uplift table from a gain curve")
    p.add_argument("--gain", required=True, help="CSV with phi,gain")
    p.add_argument("--population", type=int, default=1_000_000)
    p.add_argument("--cost-per-contact", type=float, default=1.0)
    p.add_argument("--fractions", default="0.2")
    p.add_argument("--label", default="model")
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate_policy)

    p = sub.add_parser("segment", help="persuadable / sleeping-dog / uncertain counts")
    p.add_argument("--intervals", required=True, help="CSV with tau_hat,lower,upper")
    p.add_argument("--out")
    p.set_defaults(func=cmd_segment)

    p = sub.add_parser("attribute", help="T-learner CATE SHAP for a train output directory")
    p.add_argument("--run-dir", required=True)
    p.add_argument("--rows", type=int)
    p.set_defaults(func=cmd_attribute)

    p = sub.add_parser("run", help="the full pipeline")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
        stream=sys.stderr,
    )
    try:
        args.func(args)
    except UpliftError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
