import numpy as np
import pytest

from abmuq import gp, hetgp
from abmuq.design import lhd


def replicate_data(f, sigma, n_points, n_reps, seed, p=1):
    """Stack n_reps noisy evaluations at each of n_points design locations."""
    rng = np.random.default_rng(seed)
    X0 = lhd(n_points, p, rng)
    X = np.repeat(X0, n_reps, axis=0)
    y = f(X) + rng.normal(size=len(X)) * sigma(X)
    return X0, X, y


def test_summarize_hand_arithmetic():
    X = np.array([[0.5, 0.5], [0.5, 0.5]])
    y = np.array([4.0, 6.0])
    s = hetgp.summarize_replicates(X, y)
    assert s.n == 1
    assert s.ybar[0] == pytest.approx(5.0)
    assert s.s2[0] == pytest.approx(2.0)
    assert s.counts[0] == 2
    assert not s.s2_imputed[0]


def test_summarize_identical_replicates_floor():
    X = np.repeat([[0.2, 0.8]], 5, axis=0)
    y = np.full(5, 3.0)
    s = hetgp.summarize_replicates(X, y)
    assert s.s2[0] == 0.0
    assert hetgp.variance_floor(s) > 0.0


def test_summarize_paper_design_shape():
    rng = np.random.default_rng(0)
    X0 = lhd(30, 2, rng)
    X = np.repeat(X0, 10, axis=0)
    y = rng.normal(size=300)
    s = hetgp.summarize_replicates(X, y)
    assert s.n == 30
    assert np.all(s.counts == 10)
    np.testing.assert_array_equal(s.unique_x, X0)


def test_summarize_singletons_imputed_and_flagged():
    X = np.array([[0.1], [0.1], [0.9]])
    y = np.array([1.0, 3.0, 5.0])
    s = hetgp.summarize_replicates(X, y)
    assert list(s.counts) == [2, 1]
    assert not s.s2_imputed[0] and s.s2_imputed[1]
    assert s.s2[1] == pytest.approx(s.s2[0])  # imputed with the valid mean


def test_summarize_rejects_empty():
    with pytest.raises(ValueError):
        hetgp.summarize_replicates(np.empty((0, 2)), np.empty(0))


def test_fit_homoskedastic_logvar_is_flat():
    X0, X, y = replicate_data(
        lambda x: np.sin(2 * np.pi * x[:, 0]),
        lambda x: np.full(len(x), 0.3),
        n_points=15, n_reps=40, seed=1, p=2,
    )
    model = hetgp.fit_hetgp(hetgp.summarize_replicates(X, y), rng=np.random.default_rng(2))
    rng = np.random.default_rng(3)
    grid = rng.random((400, 2))
    logvar = gp.predict(model.logvar_gp, grid).mean
    assert logvar.max() - logvar.min() < 1.0  # flat within one natural-log unit


def test_fit_heteroskedastic_orders_extremes():
    # variance ratio 100:1 between the two ends of the domain
    X0, X, y = replicate_data(
        lambda x: np.zeros(len(x)),
        lambda x: np.where(x[:, 0] < 0.5, 0.05, 0.5),
        n_points=20, n_reps=15, seed=3,
    )
    model = hetgp.fit_hetgp(hetgp.summarize_replicates(X, y), rng=np.random.default_rng(4))
    pred = hetgp.predict_hetgp(model, np.array([[0.05], [0.95]]))
    assert pred.intrinsic_var[1] > pred.intrinsic_var[0]
    assert pred.intrinsic_var[1] / pred.intrinsic_var[0] > 10


def test_mean_gp_nugget_matches_logvar_over_counts():
    X0, X, y = replicate_data(
        lambda x: x[:, 0],
        lambda x: 0.1 + 0.4 * x[:, 0],
        n_points=12, n_reps=8, seed=5,
    )
    summary = hetgp.summarize_replicates(X, y)
    model = hetgp.fit_hetgp(summary, rng=np.random.default_rng(6))
    tau2 = np.exp(gp.predict(model.logvar_gp, summary.unique_x).mean)
    np.testing.assert_allclose(model.mean_gp.noise_var, tau2 / summary.counts, rtol=1e-12)


def test_predict_positive_intrinsic_variance_everywhere():
    X0, X, y = replicate_data(
        lambda x: np.sin(2 * np.pi * x[:, 0]) * x[:, 1],
        lambda x: 0.05 + 0.3 * x[:, 0],
        n_points=15, n_reps=6, seed=7, p=2,
    )
    model = hetgp.fit_hetgp(hetgp.summarize_replicates(X, y), rng=np.random.default_rng(8))
    rng = np.random.default_rng(9)
    grid = rng.random((2500, 2))
    pred = hetgp.predict_hetgp(model, grid)
    assert np.all(pred.intrinsic_var > 0)
    assert np.all(pred.total_var >= pred.intrinsic_var)


def test_predict_training_mean_within_uncertainty():
    X0, X, y = replicate_data(
        lambda x: 2 * x[:, 0],
        lambda x: np.full(len(x), 0.05),
        n_points=10, n_reps=25, seed=10,
    )
    summary = hetgp.summarize_replicates(X, y)
    model = hetgp.fit_hetgp(summary, rng=np.random.default_rng(11))
    pred = hetgp.predict_hetgp(model, summary.unique_x)
    resid = np.abs(pred.mean - summary.ybar)
    assert np.all(resid <= 2 * np.sqrt(pred.var_mean) + 0.05)


def test_doubling_replicates_never_increases_var_mean():
    X0, X, y = replicate_data(
        lambda x: np.sin(2 * np.pi * x[:, 0]),
        lambda x: 0.1 + 0.3 * x[:, 0],
        n_points=12, n_reps=5, seed=12,
    )
    summary = hetgp.summarize_replicates(X, y)
    model = hetgp.fit_hetgp(summary, rng=np.random.default_rng(13))
    mgp = model.mean_gp
    doubled = gp.build_model(mgp.X, mgp.y, mgp.kernel, mean_const=mgp.mean_const,
                             nugget=mgp.noise_var / 2.0)
    v1 = gp.predict(mgp, summary.unique_x).var
    v2 = gp.predict(doubled, summary.unique_x).var
    assert np.all(v2 <= v1 + 1e-12)


def test_consistency_with_homoskedastic_fit():
    # equal sample variances and counts: the mean GP must match a plain fit
    # with the equivalent scalar nugget s2/a
    rng = np.random.default_rng(14)
    X0 = lhd(10, 1, rng)
    ybar = np.sin(2 * np.pi * X0[:, 0])
    s2 = np.full(10, 0.04)
    counts = np.full(10, 8)
    summary = hetgp.TrainingSummary(X0, ybar, s2, counts, np.zeros(10, bool))

    root_a = np.random.default_rng(99)
    model = hetgp.fit_hetgp(summary, rng=root_a)
    root_b = np.random.default_rng(99)
    _, child_mean = root_b.spawn(2)
    hom = gp.fit(X0, ybar, "matern52", nugget=s2 / counts, rng=child_mean)

    grid = np.linspace(0, 1, 40)[:, None]
    np.testing.assert_allclose(gp.predict(model.mean_gp, grid).mean,
                               gp.predict(hom, grid).mean, atol=1e-8)
    np.testing.assert_allclose(gp.predict(model.mean_gp, grid).var,
                               gp.predict(hom, grid).var, atol=1e-8)


def test_fit_requires_replicated_points():
    X = np.array([[0.1], [0.5], [0.9]])
    y = np.array([1.0, 2.0, 3.0])
    with pytest.raises(gp.FitError):
        hetgp.fit_hetgp(hetgp.summarize_replicates(X, y))


def test_serialization_roundtrip():
    X0, X, y = replicate_data(
        lambda x: x[:, 0] ** 2,
        lambda x: np.full(len(x), 0.2),
        n_points=8, n_reps=4, seed=15,
    )
    model = hetgp.fit_hetgp(hetgp.summarize_replicates(X, y), rng=np.random.default_rng(16))
    again = hetgp.hetgp_from_dict(hetgp.hetgp_to_dict(model))
    grid = np.linspace(0, 1, 20)[:, None]
    a, b = hetgp.predict_hetgp(model, grid), hetgp.predict_hetgp(again, grid)
    np.testing.assert_array_equal(a.mean, b.mean)
    np.testing.assert_array_equal(a.var_mean, b.var_mean)
    np.testing.assert_array_equal(a.intrinsic_var, b.intrinsic_var)
