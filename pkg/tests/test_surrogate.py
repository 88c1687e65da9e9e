import numpy as np
import pytest

from slicetwin.surrogate import (ExtrapolationWarning, LinearSurrogate, NeuralSurrogate,
                                 NotFittedError, PolynomialSurrogate, fit, fit_baseline,
                                 input_gradient, load, predict, save)


def grid_xy(n=15, lo=0.1):
    g = np.linspace(lo, 1.0, n)
    F, P = np.meshgrid(g, g, indexing="ij")
    X = np.column_stack([F.ravel(), P.ravel()])
    y = 0.3e-3 / X[:, 0] + 0.2e-3 / X[:, 1]
    return X, y


@pytest.fixture(scope="module")
def synth():
    return grid_xy()


@pytest.fixture(scope="module")
def synth_model(synth):
    X, y = synth
    rng = np.random.default_rng(42)
    idx = rng.permutation(len(y))
    hold, tr = idx[:45], idx[45:]
    model = NeuralSurrogate(hidden=(16, 32, 8), metric="delay", seed=3).fit(X[tr], y[tr])
    return model, X, y, hold


def test_constant_target(synth):
    X, _ = synth
    m = NeuralSurrogate(metric="delay", seed=1).fit(X, np.full(len(X), 1e-3))
    assert m.report_.val_rel_err < 1e-3
    g = m.input_gradient(np.array([0.5, 0.5]))
    assert np.all(np.abs(g) < 1e-3)  # flat function, near-zero gradient


def test_synthetic_surface_heldout(synth_model):
    model, X, y, hold = synth_model
    pred = np.atleast_1d(model.predict(X[hold]))
    rel = np.mean(np.abs(pred - y[hold]) / y[hold])
    assert rel <= 0.02


def test_interpolation_within_reported_error(synth_model):
    model, X, y, _ = synth_model
    pred = np.atleast_1d(model.predict(X))
    assert np.max(np.abs(pred - y)) <= model.report_.max_abs_err_all + 1e-15


def test_gradient_matches_finite_differences(synth_model):
    model, *_ = synth_model
    rng = np.random.default_rng(0)
    pts = np.column_stack([rng.uniform(0.2, 0.9, 20), rng.uniform(0.2, 0.9, 20)])
    h = 1e-4
    span = model.input_hi_ - model.input_lo_
    for p in pts:
        g = model.input_gradient(p)
        for i in range(2):
            dp = np.zeros(2)
            dp[i] = h * span[i]
            fd = (model.predict(p + dp) - model.predict(p - dp)) / (2 * h * span[i])
            assert abs(fd - g[i]) <= 1e-4 * max(abs(fd), 1e-12)
        assert g[0] < 0 and g[1] < 0  # surface decreasing in both resources


def test_delay_predictions_nonnegative(synth_model):
    model, *_ = synth_model
    g = np.linspace(0.1, 1.0, 101)
    probe = np.column_stack([g, g[::-1]])
    assert np.all(np.atleast_1d(model.predict(probe)) >= 0)


def test_throughput_transform_range(synth):
    X, _ = synth
    y = np.clip(1.0 - 0.05 / (X[:, 0] * 5 + 0.2), 0.1, 1.0)
    m = NeuralSurrogate(metric="throughput", seed=2, epochs=800).fit(X, y)
    g = np.linspace(0.1, 1.0, 101)
    pred = np.atleast_1d(m.predict(np.column_stack([g, g])))
    assert np.all(pred > 0) and np.all(pred <= 1)


def test_training_determinism(synth):
    X, y = synth
    m1 = NeuralSurrogate(seed=5, epochs=300).fit(X, y)
    m2 = NeuralSurrogate(seed=5, epochs=300).fit(X, y)
    probe = X[::7]
    assert np.array_equal(np.atleast_1d(m1.predict(probe)),
                          np.atleast_1d(m2.predict(probe)))


def test_serialization_round_trip(synth_model, tmp_path):
    model, X, *_ = synth_model
    path = tmp_path / "m.npz"
    save(model, path)
    loaded = load(path)
    g = np.linspace(0.1, 1.0, 101)
    probe = np.column_stack([g, g[::-1]])
    assert np.array_equal(np.atleast_1d(model.predict(probe)),
                          np.atleast_1d(loaded.predict(probe)))
    assert np.array_equal(model.input_gradient(probe), loaded.input_gradient(probe))


def test_baseline_serialization(tmp_path, synth):
    X, y = synth
    for m in (LinearSurrogate().fit(X, y), PolynomialSurrogate(degrees=(5, 4)).fit(X, y)):
        path = tmp_path / "b.npz"
        save(m, path)
        loaded = load(path)
        assert np.array_equal(np.atleast_1d(m.predict(X[::5])),
                              np.atleast_1d(loaded.predict(X[::5])))


def test_linear_on_linear_data():
    rng = np.random.default_rng(1)
    X = rng.uniform(0.1, 1.0, size=(80, 2))
    y = 2.0 * X[:, 0] - 0.5 * X[:, 1] + 0.3
    m, report = fit_baseline((X, y), kind="linear")
    assert report.final_loss < 1e-20
    g = m.input_gradient(np.array([0.5, 0.5]))
    span = m.input_hi_ - m.input_lo_
    assert np.allclose(g, [2.0, -0.5], atol=1e-8)


def test_baseline_error_ordering(synth):
    """On the nonconvex 1/x surface: neural < polynomial(5,4) < linear."""
    X, y = synth
    rng = np.random.default_rng(42)
    idx = rng.permutation(len(y))
    hold, tr = idx[:45], idx[45:]

    def rel(m):
        p = np.atleast_1d(m.predict(X[hold]))
        return np.mean(np.abs(p - y[hold]) / y[hold])

    nn, _ = fit((X[tr], y[tr]), seed=3)
    lin, _ = fit_baseline((X[tr], y[tr]), "linear")
    pol, _ = fit_baseline((X[tr], y[tr]), ("polynomial", 5, 4))
    assert rel(nn) < rel(pol) < rel(lin)


def test_polynomial_gradient_fd():
    X, y = grid_xy(12)
    m = PolynomialSurrogate(degrees=(5, 4)).fit(X, y)
    p = np.array([0.5, 0.4])
    g = m.input_gradient(p)
    h = 1e-5
    for i in range(2):
        dp = np.zeros(2)
        dp[i] = h
        fd = (m.predict(p + dp) - m.predict(p - dp)) / (2 * h)
        assert abs(fd - g[i]) <= 1e-5 * max(abs(fd), 1.0)


def test_too_few_rows():
    X = np.random.default_rng(0).uniform(size=(10, 2))
    with pytest.raises(ValueError, match="at least"):
        NeuralSurrogate().fit(X, np.ones(10))


def test_dimension_mismatch(synth_model):
    model, *_ = synth_model
    with pytest.raises(ValueError, match="columns"):
        model.predict(np.array([0.5, 0.5, 0.5]))


def test_not_fitted():
    with pytest.raises(NotFittedError):
        NeuralSurrogate().predict(np.array([0.5, 0.5]))


def test_nan_targets_dropped(synth):
    X, y = synth
    y = y.copy()
    y[::9] = np.nan
    m = NeuralSurrogate(seed=1, epochs=200).fit(X, y)
    assert np.isfinite(m.predict(np.array([0.5, 0.5])))


def test_extrapolation_flagged(synth_model):
    model, *_ = synth_model
    with pytest.warns(ExtrapolationWarning):
        model.predict(np.array([1.5, 0.5]))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_diagnostic(synth):
    X, y = synth
    with pytest.raises(RuntimeError, match="diverged"):
        NeuralSurrogate(lr=500.0, epochs=200, seed=0).fit(X, y)


def test_estimator_params_protocol():
    m = NeuralSurrogate(hidden=(4, 4), lr=0.1, seed=9)
    params = m.get_params()
    assert params["hidden"] == (4, 4) and params["lr"] == 0.1 and params["seed"] == 9
    clone = NeuralSurrogate(**params)
    assert clone.get_params() == params
    m.set_params(lr=0.2)
    assert m.lr == 0.2
    with pytest.raises(ValueError):
        m.set_params(nonsense=1)


def test_op_wrappers(synth):
    X, y = synth
    model, report = fit((X, y), arch=(8, 8), seed=1, metric="delay")
    x = np.array([0.5, 0.5])
    assert predict(model, x) == model.predict(x)
    assert np.array_equal(input_gradient(model, x), model.input_gradient(x))
    assert report.val_rel_err >= 0
