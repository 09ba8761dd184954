import numpy as np
import pytest

from upliftkit.exceptions import ConfigError
from upliftkit.synth import PRESETS, DgpSpec, generate_dgp, preset
from upliftkit.propensity import fit_propensity


def _ate(ds):
    t = ds.treatment == 1
    y1, y0 = ds.outcome[t], ds.outcome[~t]
    return y1.mean() - y0.mean(), np.sqrt(y1.var() / y1.size + y0.var() / y0.size)


@pytest.mark.slow
def test_constant_preset_ate():
    ds, truth = generate_dgp(preset("CONSTANT", 1_000_000, seed=11))
    np.testing.assert_allclose(truth.tau, 0.02, atol=1e-15)
    ate, se = _ate(ds)
    # 0.001 is about 2 standard errors here; the CLT bound is 3
    assert se < 0.0005
    assert abs(ate - 0.02) <= 3 * se


@pytest.mark.slow
def test_null_preset_ate():
    ds, truth = generate_dgp(preset("NULL", 1_000_000, seed=11))
    assert np.all(truth.tau == 0)
    ate, se = _ate(ds)
    assert se < 0.0005
    assert abs(ate) <= 3 * se


def test_f8dom_preset():
    spec = preset("F8DOM", 50_000, seed=2)
    assert spec.treatment_share == 0.85 and spec.d == 12
    ds, truth = generate_dgp(spec)
    # 0.06 * U(0, 1) has mean 0.03
    assert abs(truth.tau.mean() - 0.03) <= 4 * 0.06 / np.sqrt(12 * spec.n)
    np.testing.assert_allclose(truth.tau, 0.06 * ds.features[:, 8])
    assert abs(ds.treatment.mean() - 0.85) <= 0.01


def test_ground_truth_consistency():
    ds, truth = generate_dgp(preset("SIGNFLIP", 50_000, seed=4))
    np.testing.assert_array_equal(truth.p1 - truth.p0, truth.tau)
    assert np.all((truth.p0 > 0) & (truth.p0 < 1) & (truth.p1 > 0) & (truth.p1 < 1))
    assert (truth.tau < 0).any() and (truth.tau > 0).any()


@pytest.mark.parametrize("name", sorted(PRESETS))
def test_reproducible(name):
    a, ta = generate_dgp(preset(name, 2000, seed=9))
    b, tb = generate_dgp(preset(name, 2000, seed=9))
    assert a.features.tobytes() == b.features.tobytes()
    assert a.treatment.tobytes() == b.treatment.tobytes()
    assert a.outcome.tobytes() == b.outcome.tobytes()
    assert ta.tau.tobytes() == tb.tau.tobytes()


def test_features_uniform_and_treatment_independent():
    ds, _ = generate_dgp(preset("LINEAR", 100_000, seed=5))
    assert ds.features.min() >= 0 and ds.features.max() < 1
    np.testing.assert_allclose(ds.features.mean(axis=0), 0.5, atol=0.01)
    rep = fit_propensity(ds)
    assert abs(rep.auc - 0.5) <= 0.02


@pytest.mark.slow
@pytest.mark.parametrize("name", ["LINEAR", "F8DOM", "SIGNFLIP"])
def test_binned_uplift_matches_tau(name):
    spec = preset(name, 400_000, seed=8)
    ds, truth = generate_dgp(spec)
    feat = {"LINEAR": 0, "F8DOM": 8, "SIGNFLIP": 0}[name]
    bins = np.minimum((ds.features[:, feat] * 5).astype(int), 4)
    for b in range(5):
        m = bins == b
        t = ds.treatment[m] == 1
        y = ds.outcome[m]
        y1, y0 = y[t], y[~t]
        est = y1.mean() - y0.mean()
        se = np.sqrt(y1.var() / y1.size + y0.var() / y0.size)
        assert abs(est - truth.tau[m].mean()) <= 3 * se


def test_invalid_probability_rejected():
    with pytest.raises(ConfigError, match="treated rate"):
        DgpSpec(n=10, tau_fn="const:0.99", base_rate_fn="const:0.05").validate()
    with pytest.raises(ConfigError, match="base rate"):
        DgpSpec(n=10, base_rate_fn="const:0").validate()
    with pytest.raises(ConfigError):
        DgpSpec(n=10, d=4, tau_fn="f8dom").validate()
    with pytest.raises(ConfigError):
        preset("NOPE", 10)
