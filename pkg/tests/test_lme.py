import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from asvmismatch import lme
from asvmismatch.errors import CollinearityError, DesignError, NotNestedError
from asvmismatch.predictors import Design
from conftest import random_small_design
from oracles import dense_deviance, dense_design, grid_search, ols

THETAS = np.round(np.arange(0.0, 10.05, 0.1), 10)

# 3 speakers x 4 rows, two predictors
TINY_X = np.array([
    [0.2, 1.1], [1.4, 0.3], [0.9, 2.2], [2.5, 0.8],
    [0.1, 0.4], [1.7, 1.9], [0.6, 0.2], [2.2, 2.7],
    [1.0, 1.0], [0.4, 2.4], [2.9, 0.5], [1.3, 1.6],
])
TINY_Y = np.array([31.2, 27.9, 26.4, 24.1, 22.8, 18.5, 23.9, 15.2, 35.6, 30.1, 29.7, 33.0])
TINY_G = np.repeat([0, 1, 2], 4)


def tiny_design():
    return Design(TINY_Y, TINY_X, ("x0", "x1"), [f"s{g}" for g in TINY_G], np.arange(12))


def design_from(X, y, g):
    X = np.asarray(X, dtype=float).reshape(len(y), -1)
    names = tuple(f"x{j}" for j in range(X.shape[1]))
    return Design(np.asarray(y, float), X, names, [f"s{v}" for v in g], np.arange(len(y)))


# -- profiled deviance ---------------------------------------------------------

@pytest.mark.parametrize("criterion", ["ML", "REML"])
def test_tiny_deviance_matches_dense_oracle(criterion):
    d = tiny_design()
    for theta in THETAS:
        dev, beta, s2 = lme.profiled_deviance(theta, d, criterion)
        odev, obeta, os2 = dense_deviance(theta, TINY_X, TINY_Y, TINY_G, criterion)
        assert dev == pytest.approx(odev, abs=1e-6)
        np.testing.assert_allclose(beta, obeta, atol=1e-9)
        assert s2 == pytest.approx(os2, rel=1e-9)


def test_theta_one_on_tiny_dataset():
    dev, _, _ = lme.profiled_deviance(1.0, tiny_design(), "ML")
    assert dev == pytest.approx(dense_deviance(1.0, TINY_X, TINY_Y, TINY_G, "ML")[0], abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_random_designs_match_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    d, X, y, g = random_small_design(rng)
    for criterion in ("ML", "REML"):
        for theta in THETAS[::7]:
            assert lme.profiled_deviance(theta, d, criterion)[0] == pytest.approx(
                dense_deviance(theta, X, y, g, criterion)[0], abs=1e-6)


def test_theta_zero_is_ols():
    d = tiny_design()
    dev, beta, s2 = lme.profiled_deviance(0.0, d, "ML")
    b, fitted = ols(TINY_X, TINY_Y)
    rss = float(np.sum((TINY_Y - fitted) ** 2))
    n = len(TINY_Y)
    np.testing.assert_allclose(beta, b, atol=1e-10)
    assert s2 == pytest.approx(rss / n, rel=1e-12)
    assert dev == pytest.approx(n * math.log(2 * math.pi * rss / n) + n, abs=1e-10)


def test_duplicate_column_raises_singularity():
    X = np.column_stack([TINY_X, TINY_X[:, 0]])
    d = Design(TINY_Y, X, ("x0", "x1", "x0_copy"), [f"s{g}" for g in TINY_G], np.arange(12))
    with pytest.raises(CollinearityError) as err:
        lme.profiled_deviance(0.5, d, "ML")
    assert "x0_copy" in str(err.value)
    assert err.value.columns == ["x0_copy"]


def test_negative_theta_rejected():
    with pytest.raises(ValueError):
        lme.profiled_deviance(-0.1, tiny_design(), "ML")


def test_unknown_criterion():
    with pytest.raises(ValueError):
        lme.fit(tiny_design(), "GLS")


# -- fit -------------------------------------------------------------------------

@pytest.mark.parametrize("criterion", ["ML", "REML"])
def test_tiny_fit_matches_grid_oracle(criterion):
    f = lme.fit(tiny_design(), criterion)
    theta, dev, beta, s2 = grid_search(TINY_X, TINY_Y, TINY_G, criterion)
    assert f.theta == pytest.approx(theta, abs=1e-4)
    assert -2 * f.loglik == pytest.approx(dev, abs=1e-6)
    np.testing.assert_allclose(f.beta, beta, atol=1e-6)
    assert f.sigma2 == pytest.approx(s2, rel=1e-5)


def test_noiseless_identity(catalog):
    rng = np.random.default_rng(3)
    g = np.repeat(np.arange(10), 8)
    X = rng.random((80, 3))
    beta = np.array([28.0, -1.0, -0.35, 0.5])
    y = beta[0] + X @ beta[1:]
    f = lme.fit(design_from(X, y, g), "REML")
    np.testing.assert_allclose(f.beta, beta, atol=1e-8)
    assert f.sigma_b2 <= 1e-8
    assert np.corrcoef(f.fitted, y)[0, 1] == pytest.approx(1.0, abs=1e-12)


def test_recovery_single_seed(small_synth):
    f = lme.fit(small_synth.design, "REML")
    truth = small_synth.truth["coefficients"]
    for name, b, se in zip(f.names, f.beta, f.se):
        assert abs(b - truth[name]) < 4 * se
    assert 2.0 < math.sqrt(f.sigma_b2) < 7.0
    assert 8.0 < math.sqrt(f.sigma2) < 10.0


def test_fit_result_fields(small_synth):
    f = lme.fit(small_synth.design, "REML")
    assert f.names == ("(Intercept)", "F0", "VQ")
    assert f.n == 480 and f.n_speakers == 40
    assert f.df_resid == 477
    assert f.k == 5
    assert f.converged
    assert f.sigma_b2 >= 0 and f.sigma2 > 0
    np.testing.assert_allclose(f.t_values, f.beta / f.se)
    assert f.aic == pytest.approx(2 * 5 - 2 * f.loglik_ml)
    ml = lme.fit(small_synth.design, "ML")
    assert f.loglik_ml == pytest.approx(ml.loglik, abs=1e-9)
    assert f.theta_ml == pytest.approx(ml.theta, rel=1e-8)


def test_ml_variance_smaller_than_reml(small_synth):
    ml = lme.fit(small_synth.design, "ML")
    reml = lme.fit(small_synth.design, "REML")
    assert ml.sigma2 < reml.sigma2


def test_nonconvergence_is_flagged(small_synth):
    f = lme.fit(small_synth.design, "ML", max_iter=1)
    assert not f.converged
    assert f.iterations == 1


def test_boundary_fit():
    # no between-speaker variation at all
    rng = np.random.default_rng(5)
    g = np.repeat(np.arange(6), 5)
    X = rng.random((30, 1))
    y = 2 + X[:, 0] + rng.normal(size=30)
    y = y - np.repeat(np.add.reduceat(y - 2 - X[:, 0], np.arange(0, 30, 5)) / 5, 5) * 1.5
    f = lme.fit(design_from(X, y, g), "ML")
    assert f.theta == 0.0
    assert f.boundary
    assert f.sigma_b2 == 0.0


def test_too_few_speakers_or_rows():
    y = np.arange(6.0)
    with pytest.raises(DesignError, match="2 speakers"):
        lme.fit(design_from(np.arange(6.0), y, [0] * 6))
    with pytest.raises(DesignError, match="insufficient rows"):
        lme.fit(design_from(np.arange(4.0), y[:4], [0, 0, 1, 1]))


def test_pinned_theta():
    f = lme.fit(tiny_design(), "ML", theta=2.5)
    assert f.theta == 2.5
    dev = dense_deviance(2.5, TINY_X, TINY_Y, TINY_G, "ML")[0]
    assert -2 * f.loglik == pytest.approx(dev, abs=1e-9)


# -- AIC / Wald / LRT -------------------------------------------------------------

def _with_loglik(fit, ll, p=None):
    kw = {"loglik_ml": ll}
    if p is not None:
        kw["beta"] = np.zeros(p)
    return dataclasses.replace(fit, **kw)


def test_aic_examples():
    base = lme.fit(tiny_design(), "ML")
    assert lme.aic(_with_loglik(base, 0.0, p=1)) == 6.0
    assert lme.aic(_with_loglik(base, -100.0, p=8)) == 220.0


def test_wald_single_coefficient_is_t_squared(small_synth):
    f = lme.fit(small_synth.design, "REML")
    for j, name in enumerate(f.names):
        w = lme.wald_test(f, [name])
        assert w.F == pytest.approx(f.t_values[j] ** 2, rel=1e-10)
        assert (w.df_num, w.df_den) == (1, f.n - f.p)


def test_wald_t_equals_two():
    base = lme.fit(tiny_design(), "ML")
    f = dataclasses.replace(base, beta=np.array([2.0, 0.0, 0.0]),
                            cov_beta=np.eye(3), se=np.ones(3), t_values=np.array([2.0, 0, 0]))
    w = lme.wald_test(f, "(Intercept)")
    assert w.F == pytest.approx(4.0, abs=1e-12)
    assert w.df_num == 1


@pytest.mark.parametrize("C", [[], np.zeros((0, 3)), None])
def test_wald_empty_contrast(C):
    f = lme.fit(tiny_design(), "ML")
    with pytest.raises(ValueError, match="empty contrast"):
        lme.wald_test(f, C)


def test_wald_unknown_name_and_bad_shape():
    f = lme.fit(tiny_design(), "ML")
    with pytest.raises(ValueError, match="unknown coefficient"):
        lme.wald_test(f, ["x9"])
    with pytest.raises(ValueError, match="columns"):
        lme.wald_test(f, np.ones((1, 2)))


def test_wald_joint_matches_dense_quadratic_form():
    f = lme.fit(tiny_design(), "REML")
    Xf, Z = dense_design(TINY_X, TINY_G)
    V = f.sigma2 * (np.eye(12) + f.theta * Z @ Z.T)
    cov = np.linalg.inv(Xf.T @ np.linalg.inv(V) @ Xf)
    C = np.array([[0, 1.0, 0], [0, 0, 1.0]])
    est = C @ f.beta
    F = est @ np.linalg.inv(C @ cov @ C.T) @ est / 2
    w = lme.wald_test(f, ["x0", "x1"])
    assert w.F == pytest.approx(F, rel=1e-8)
    assert lme.wald_test(f, C).F == pytest.approx(w.F, rel=1e-12)


def test_lrt_example():
    base = lme.fit(tiny_design(), "ML")
    reduced = lme.fit(tiny_design().subset(["x0"]), "ML")
    full = _with_loglik(base, -50.0)
    red = _with_loglik(reduced, -52.0)
    res = lme.likelihood_ratio_test(full, red)
    assert res.chi2 == pytest.approx(4.0)
    assert res.df == 1
    assert res.p_value == pytest.approx(0.0455, abs=5e-5)
    assert res.p_value == pytest.approx(math.erfc(math.sqrt(2.0)), rel=1e-12)


def test_lrt_identical_models():
    f = lme.fit(tiny_design(), "ML")
    res = lme.likelihood_ratio_test(f, f)
    assert res.chi2 == 0.0 and res.p_value == 1.0
    assert res.aic_full == res.aic_reduced


def test_lrt_not_nested():
    a = lme.fit(tiny_design().subset(["x0"]), "ML")
    b = lme.fit(tiny_design().subset(["x1"]), "ML")
    with pytest.raises(NotNestedError, match="not nested"):
        lme.likelihood_ratio_test(a, b)


def test_lrt_different_rows():
    a = lme.fit(tiny_design(), "ML")
    d = tiny_design()
    b = lme.fit(d.with_response(d.response + 1.0).subset(["x0"]), "ML")
    with pytest.raises(NotNestedError, match="different rows"):
        lme.likelihood_ratio_test(a, b)


def test_aic_difference_identity(small_synth):
    full = lme.fit(small_synth.design, "ML")
    red = lme.fit(small_synth.design.subset(["F0"]), "ML")
    res = lme.likelihood_ratio_test(full, red)
    assert res.aic_reduced - res.aic_full == pytest.approx(res.chi2 - 2 * res.df, abs=1e-8)
    assert res.aic_full - res.aic_reduced == pytest.approx(2 * res.df - res.chi2, abs=1e-8)


# -- invariants ---------------------------------------------------------------------

def test_deviance_at_optimum_beats_grid(small_synth):
    for criterion in ("ML", "REML"):
        f = lme.fit(small_synth.design, criterion)
        model = lme.RandomInterceptModel(small_synth.design)
        best = model.deviance(f.theta, criterion)[0]
        for th in np.r_[0.0, np.logspace(-4, 6, 81)]:
            assert best <= model.deviance(th, criterion)[0] + 1e-12


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_fitted_plus_residuals_is_response(seed):
    d, *_ = random_small_design(np.random.default_rng(seed))
    f = lme.fit(d, "REML")
    np.testing.assert_allclose(f.fitted + f.residuals, f.response, rtol=0, atol=1e-10)


def test_shrinkage_formula(small_synth):
    d = small_synth.design
    f = lme.fit(d, "REML")
    spk = np.asarray(d.speaker_ids)
    marginal = f.response - f.fitted_fixed
    for s, b in f.blups.items():
        m = spk == s
        n_i = m.sum()
        shrink = n_i * f.theta / (1 + n_i * f.theta)
        assert b == pytest.approx(shrink * marginal[m].mean(), rel=1e-10, abs=1e-12)


def test_blups_vanish_as_theta_goes_to_zero(small_synth):
    big = max(abs(v) for v in lme.fit(small_synth.design, "ML", theta=1.0).blups.values())
    small = max(abs(v) for v in lme.fit(small_synth.design, "ML", theta=1e-9).blups.values())
    assert small < 1e-6 * big
    assert all(v == 0.0 for v in lme.fit(small_synth.design, "ML", theta=0.0).blups.values())


def test_gls_weighted_residual_mean_is_zero(small_synth):
    d = small_synth.design
    f = lme.fit(d, "REML")
    spk = np.asarray(d.speaker_ids)
    marginal = f.response - f.fitted_fixed
    total = 0.0
    for s in np.unique(spk):
        m = spk == s
        total += marginal[m].sum() / (1 + m.sum() * f.theta)
    assert abs(total) < 1e-8
    ols_fit = lme.fit(d, "ML", theta=0.0)
    assert abs(ols_fit.residuals.mean()) < 1e-8


def test_permutation_invariance(small_synth):
    d = small_synth.design
    perm = np.random.default_rng(0).permutation(d.n)
    dp = Design(d.response[perm], d.predictors[perm], d.predictor_names,
                [d.speaker_ids[i] for i in perm], d.trial_index[perm])
    a, b = lme.fit(d, "REML"), lme.fit(dp, "REML")
    np.testing.assert_allclose(a.beta, b.beta, atol=1e-9)
    np.testing.assert_allclose(a.se, b.se, atol=1e-9)
    for attr in ("sigma2", "sigma_b2", "theta", "loglik", "loglik_ml"):
        assert getattr(a, attr) == pytest.approx(getattr(b, attr), abs=1e-9)
    np.testing.assert_allclose(a.fitted[perm], b.fitted, atol=1e-9)
    for s in a.blups:
        assert a.blups[s] == pytest.approx(b.blups[s], abs=1e-9)


@pytest.mark.parametrize("k", [0.01, 3.0, 250.0])
def test_scale_equivariance(small_synth, k):
    d = small_synth.design
    a = lme.fit(d, "REML")
    b = lme.fit(d.with_response(d.response * k), "REML")
    np.testing.assert_allclose(b.beta, k * a.beta, rtol=1e-8)
    assert math.sqrt(b.sigma2) == pytest.approx(k * math.sqrt(a.sigma2), rel=1e-8)
    assert math.sqrt(b.sigma_b2) == pytest.approx(k * math.sqrt(a.sigma_b2), rel=1e-8)
    np.testing.assert_allclose(b.t_values, a.t_values, rtol=1e-8)
    assert b.theta == pytest.approx(a.theta, rel=1e-8)
    ra = np.corrcoef(a.fitted, a.response)[0, 1]
    rb = np.corrcoef(b.fitted, b.response)[0, 1]
    assert rb == pytest.approx(ra, abs=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_theta_zero_reproduces_ols(seed):
    d, X, y, g = random_small_design(np.random.default_rng(seed))
    f = lme.fit(d, "ML", theta=0.0)
    b, fitted = ols(X, y)
    np.testing.assert_allclose(f.beta, b, atol=1e-8)
    np.testing.assert_allclose(f.fitted, fitted, atol=1e-8)
    assert f.sigma2 == pytest.approx(np.sum((y - fitted) ** 2) / len(y), rel=1e-8)


def test_one_trial_per_speaker_is_ols():
    rng = np.random.default_rng(2)
    X = rng.random((30, 2))
    y = 1 + X @ [2.0, -1.0] + rng.normal(size=30)
    f = lme.fit(design_from(X, y, np.arange(30)), "ML")
    b, fitted = ols(X, y)
    np.testing.assert_allclose(f.beta, b, atol=1e-8)
    np.testing.assert_allclose(f.fitted, fitted, atol=1e-8)
    assert f.sigma2 == pytest.approx(np.sum((y - fitted) ** 2) / 30, rel=1e-8)
    r = np.corrcoef(f.fitted, y)[0, 1]
    r2 = 1 - np.sum((y - fitted) ** 2) / np.sum((y - y.mean()) ** 2)
    assert r == pytest.approx(math.sqrt(r2), abs=1e-8)
    assert f.theta == 0.0


def test_save_load_round_trip(tmp_path, small_synth):
    f = lme.fit(small_synth.design, "REML")
    lme.save_fit(f, tmp_path / "fit.json")
    g = lme.load_fit(tmp_path / "fit.json")
    assert g.names == f.names
    np.testing.assert_array_equal(g.beta, f.beta)
    np.testing.assert_array_equal(g.fitted, f.fitted)
    np.testing.assert_array_equal(g.residuals, f.residuals)
    assert g.speaker_ids == f.speaker_ids
    assert g.blups == f.blups
    assert (g.sigma2, g.sigma_b2, g.theta, g.aic) == (f.sigma2, f.sigma_b2, f.theta, f.aic)


@pytest.mark.parametrize("criterion", ["ML", "REML"])
@pytest.mark.parametrize("theta", [0.05, 0.7, 3.0, 40.0])
def test_gradient_matches_oracle_difference(criterion, theta):
    model = lme.RandomInterceptModel(tiny_design())
    h = 1e-5 * theta
    num = (dense_deviance(theta + h, TINY_X, TINY_Y, TINY_G, criterion)[0]
           - dense_deviance(theta - h, TINY_X, TINY_Y, TINY_G, criterion)[0]) / (2 * h)
    assert model.gradient(theta, criterion) == pytest.approx(num, rel=1e-5, abs=1e-7)


def test_gradient_vanishes_at_interior_optimum(small_synth):
    model = lme.RandomInterceptModel(small_synth.design)
    for criterion in ("ML", "REML"):
        f = lme.fit(small_synth.design, criterion, model=model)
        assert 0 < f.theta < lme.THETA_MAX
        assert abs(model.gradient(f.theta, criterion)) < 1e-6
