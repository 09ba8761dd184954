"""Uplift modeling toolkit: CATE meta-learners over built-in boosted trees,
an honest causal forest with bootstrap intervals, Qini evaluation, policy
simulation and tree SHAP attribution."""

from .attribution import ShapMatrix, cate_shap, shap_summary, tree_shap
from .causal_forest import (
    BootstrapCausalForest,
    CateInterval,
    CausalForest,
    HonestTreeParams,
    cf_fit,
    cf_subsample,
    interval_from_replicates,
)
from .data import (
    BinningScheme,
    CsvSchema,
    QuantileBinner,
    SplitIndices,
    StandardizationParams,
    Standardizer,
    UpliftDataset,
    load_csv,
    quantile_bin,
    standardize,
    stratified_split,
    write_csv,
)
from .evaluation import (
    GainCurve,
    PolicyReport,
    QiniResult,
    SegmentCounts,
    capture_at,
    gain_curve,
    policy_simulate,
    qini,
    segment_by_interval,
)
from .gbdt import DecisionTree, GbdtParams, GradientBoostedTrees, gbdt_fit, gbdt_predict
from .logistic import LogisticRegression, logistic_fit
from .meta_learners import CateEstimate, SLearner, TLearner, XLearner, s_fit, t_fit, x_fit
from .pipeline import RunConfig, canonical_report, run_pipeline
from .propensity import PropensityReport, append_propensity, fit_propensity, roc_auc
from .synth import DgpSpec, GroundTruth, generate_dgp, preset

__version__ = "0.1.0"
