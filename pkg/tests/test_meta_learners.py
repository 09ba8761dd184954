import numpy as np
import pytest
from scipy.stats import pearsonr, spearmanr

from conftest import desk_learner, fitted_learners, prepared
from upliftkit.exceptions import FitError, ParameterError
from upliftkit.gbdt import GradientBoostedTrees
from upliftkit.meta_learners import SLearner, TLearner, XLearner


def _small(seed=0, n=3000, d=3):
    rng = np.random.default_rng(seed)
    X = rng.random((n, d))
    t = (rng.random(n) < 0.5).astype(int)
    y = (rng.random(n) < 0.2 + 0.3 * X[:, 0] + 0.1 * t * X[:, 1]).astype(int)
    return X, t, y


SMALL = dict(num_trees=20, max_leaves=6, min_samples_leaf=20)


def test_s_learner_without_treatment_split_is_zero():
    rng = np.random.default_rng(1)
    X = rng.random((2000, 2))
    t = np.arange(2000) % 2
    y = (X[:, 0] > 0.5).astype(int)
    m = SLearner(GradientBoostedTrees(num_trees=5, max_leaves=2)).fit(X, t, y)
    assert all(2 not in tree.feature for tree in m.model_.trees_)
    assert np.all(m.predict(X) == 0.0)


@pytest.mark.parametrize("cls", [SLearner, TLearner, XLearner])
def test_estimates_are_bounded_and_repeatable(cls):
    X, t, y = _small()
    m = cls(GradientBoostedTrees(**SMALL)).fit(X, t, y)
    a, b = m.predict(X), m.predict(X)
    assert np.array_equal(a, b)
    assert np.all(np.abs(a) <= 1)
    est = m.predict_cate(X)
    assert est.model_id == cls.model_id
    assert est.summary() == {"mean": float(np.mean(a)), "std": float(np.std(a))}


@pytest.mark.parametrize("cls", [SLearner, TLearner, XLearner])
def test_serialization_round_trip(cls):
    X, t, y = _small(2)
    m = cls(GradientBoostedTrees(**SMALL)).fit(X, t, y)
    back = cls.from_dict(m.to_dict())
    assert np.array_equal(back.predict(X), m.predict(X))


def test_identical_arms_give_zero():
    X, _, y = _small(3, n=1500)
    Xd = np.vstack([X, X])
    t = np.r_[np.zeros(1500, int), np.ones(1500, int)]
    m = TLearner(GradientBoostedTrees(**SMALL)).fit(Xd, t, np.r_[y, y])
    assert np.max(np.abs(m.predict(X))) <= 1e-6


def test_label_symmetry():
    X, t, y = _small(4)
    a = TLearner(GradientBoostedTrees(**SMALL)).fit(X, t, y).predict(X)
    b = TLearner(GradientBoostedTrees(**SMALL)).fit(X, 1 - t, y).predict(X)
    assert np.array_equal(a, -b)


def test_single_arm_is_fit_error():
    X, _, y = _small(5, n=200)
    for cls in (SLearner, TLearner, XLearner):
        with pytest.raises(FitError):
            cls().fit(X, np.ones(200, int), y)


def test_tiny_arm_is_fit_error():
    X, _, y = _small(6, n=200)
    t = np.zeros(200, int)
    t[:5] = 1
    with pytest.raises(FitError, match="min_samples_leaf"):
        TLearner(GradientBoostedTrees(min_samples_leaf=20)).fit(X, t, y)


def test_dimension_mismatch():
    X, t, y = _small(7, n=500)
    m = TLearner(GradientBoostedTrees(num_trees=3)).fit(X, t, y)
    with pytest.raises(ParameterError):
        m.predict(X[:, :2])


def test_x_blend_endpoints():
    X, t, y = _small(8)
    m = XLearner(GradientBoostedTrees(**SMALL)).fit(X, t, y)
    tau0, tau1 = m.tau0_.predict(X), m.tau1_.predict(X)
    assert np.array_equal(m.predict(X, propensity=0.0), tau1)
    assert np.array_equal(m.predict(X, propensity=1.0), tau0)
    assert np.array_equal(m.predict(X, propensity=0.5), (tau0 + tau1) / 2)
    e = m.propensity(X)
    assert np.array_equal(m.predict(X), e * tau0 + (1 - e) * tau1)


def test_x_stage2_uses_squared_loss():
    X, t, y = _small(9)
    m = XLearner(GradientBoostedTrees(**SMALL)).fit(X, t, y)
    assert m.tau0_.loss == m.tau1_.loss == "squared"
    assert m.stage1_.mu0_.loss == "logistic"


# --- synthetic recovery at n = 2e5 -------------------------------------------


def test_x_learner_plug_in_oracle():
    p = prepared("CONSTANT")
    tr = p.train_p
    idx = p.split.train
    m = XLearner(desk_learner()).fit_stage2(tr.features, tr.treatment, tr.outcome,
                                            p.truth.p0[idx], p.truth.p1[idx])
    tau = m.predict(p.test_p.features, propensity=p.test_p.features[:, -1])
    assert abs(tau.mean() - 0.02) <= 0.005


@pytest.mark.parametrize("model_id", ["S", "T", "X"])
def test_constant_effect_mean(model_id):
    p = prepared("CONSTANT")
    tau = fitted_learners("CONSTANT")[model_id].predict(p.test_p.features)
    tol = 0.005 if model_id != "T" else 0.006
    assert abs(tau.mean() - 0.02) <= tol


@pytest.mark.parametrize("model_id", ["S", "T", "X"])
def test_null_effect_mean(model_id):
    p = prepared("NULL")
    tau = fitted_learners("NULL")[model_id].predict(p.test_p.features)
    assert abs(tau.mean()) <= 0.005


@pytest.mark.parametrize("model_id", ["S", "X"])
def test_f8dom_correlation(model_id):
    p = prepared("F8DOM")
    tau = fitted_learners("F8DOM")[model_id].predict(p.test_p.features)
    assert pearsonr(tau, p.tau_test)[0] >= 0.6


def test_f8dom_t_spread_exceeds_s():
    p = prepared("F8DOM")
    fl = fitted_learners("F8DOM")
    assert np.std(fl["T"].predict(p.test_p.features)) >= np.std(fl["S"].predict(p.test_p.features))


def test_f8dom_rankings_agree():
    p = prepared("F8DOM")
    fl = fitted_learners("F8DOM")
    taus = {k: m.predict(p.test_p.features) for k, m in fl.items()}
    for a, b in (("S", "T"), ("S", "X"), ("T", "X")):
        assert spearmanr(taus[a], taus[b])[0] >= 0.5, (a, b)
