"""Learned QoE surfaces: neural surrogates plus linear/polynomial baselines.

Estimator-style API: construct with hyperparameters, ``fit(X, y)`` returns
self, then ``predict(X)`` and ``input_gradient(x)``.  ``get_params`` /
``set_params`` follow the scikit-learn convention so the models compose with
that ecosystem (cloning, grid search) without importing it here.

Targets are trained in a transformed space chosen by ``metric``:

* delay metrics train on log(y), so predictions are positive by construction;
* throughput metrics train on logit(y), so predictions stay in (0, 1].

Gradients are exact backpropagation through the same transforms, which the
constrained optimizer consumes directly.
"""

from __future__ import annotations

import inspect
import warnings
from dataclasses import dataclass
from itertools import product

import numpy as np

MIN_ROWS = 20
_DELAY_EPS = 1e-9      # floor inside log() for delay targets
_THRU_EPS = 1e-6       # clip for logit() of success fractions

DELAY_METRICS = ("delay", "site-delay")
THROUGHPUT_METRICS = ("throughput", "site-throughput")
METRICS = DELAY_METRICS + THROUGHPUT_METRICS


class NotFittedError(RuntimeError):
    pass


class ExtrapolationWarning(UserWarning):
    """Prediction requested outside the model's training box."""


@dataclass
class FitReport:
    train_rel_err: float
    val_rel_err: float
    epochs_run: int
    final_loss: float
    max_abs_err: float        # on the held-out rows
    max_abs_err_all: float    # over every row seen at fit time
    n_train: int = 0
    n_val: int = 0


def check_matrix(X, dim=None, name="X"):
    """Validate a 2-D float input matrix (finite, right width)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2:
        raise ValueError(f"{name} must be 1-D or 2-D, got shape {X.shape}")
    if dim is not None and X.shape[1] != dim:
        raise ValueError(f"{name} has {X.shape[1]} columns, model expects {dim}")
    if not np.all(np.isfinite(X)):
        raise ValueError(f"{name} contains non-finite values")
    return X


def _drop_nan_targets(X, y):
    y = np.asarray(y, dtype=float).ravel()
    mask = np.isfinite(y)
    return X[mask], y[mask]


def _rel_err(y_true, y_pred):
    scale = np.maximum(np.abs(y_true), 1e-12)
    return float(np.mean(np.abs(y_pred - y_true) / scale))


class BaseSurrogate:
    """get_params/set_params plus the shared transform machinery."""

    def get_params(self, deep=True):
        names = [p for p in inspect.signature(type(self).__init__).parameters
                 if p != "self"]
        return {n: getattr(self, n) for n in names}

    def set_params(self, **params):
        valid = self.get_params()
        for k, v in params.items():
            if k not in valid:
                raise ValueError(f"unknown parameter {k!r} for {type(self).__name__}")
            setattr(self, k, v)
        return self

    # -- fitted-state helpers -------------------------------------------------

    def _require_fitted(self):
        if not getattr(self, "fitted_", False):
            raise NotFittedError(f"{type(self).__name__} is not fitted")

    def _set_box(self, X):
        self.input_lo_ = X.min(axis=0)
        self.input_hi_ = X.max(axis=0)
        span = self.input_hi_ - self.input_lo_
        span[span == 0] = 1.0
        self._span = span

    def _norm(self, X, check_box=True):
        if check_box:
            tol = 1e-9 + 1e-9 * np.abs(self._span)
            if np.any(X < self.input_lo_ - tol) or np.any(X > self.input_hi_ + tol):
                warnings.warn("input outside the model's training box; "
                              "prediction is an extrapolation", ExtrapolationWarning,
                              stacklevel=3)
        return 2.0 * (X - self.input_lo_) / self._span - 1.0

    def _encode_target(self, y):
        if self.metric in DELAY_METRICS:
            return np.log(np.maximum(y, _DELAY_EPS))
        return np.log(np.clip(y, _THRU_EPS, 1.0 - _THRU_EPS)
                      / (1.0 - np.clip(y, _THRU_EPS, 1.0 - _THRU_EPS)))

    def _decode(self, u):
        if self.metric in DELAY_METRICS:
            return np.exp(u)
        return 1.0 / (1.0 + np.exp(-u))

    def _decode_grad(self, u):
        """d(decode)/du at u."""
        if self.metric in DELAY_METRICS:
            return np.exp(u)
        s = 1.0 / (1.0 + np.exp(-u))
        return s * (1.0 - s)

    # -- common public surface -----------------------------------------------

    @property
    def input_dim(self):
        self._require_fitted()
        return len(self.input_lo_)

    def predict(self, X):
        self._require_fitted()
        X = check_matrix(X, dim=self.input_dim)
        u = self._forward(self._norm(X))
        out = self._decode(u)
        return out if out.shape[0] > 1 else float(out[0])

    def input_gradient(self, x):
        """d(prediction)/d(raw inputs) at x; exact, matches finite differences."""
        self._require_fitted()
        X = check_matrix(x, dim=self.input_dim)
        u = self._forward(self._norm(X))
        du_dz = self._forward_grad(self._norm(X))       # wrt normalized inputs
        grad = du_dz * self._decode_grad(u)[:, None] * (2.0 / self._span)[None, :]
        return grad if grad.shape[0] > 1 else grad[0]

    def _evaluate(self, X, y):
        pred = np.atleast_1d(self.predict(X))
        return _rel_err(y, pred), float(np.max(np.abs(pred - y))) if len(y) else 0.0


class NeuralSurrogate(BaseSurrogate):
    """Feed-forward tanh network trained by mini-batch gradient descent with
    momentum.  Smooth end to end, so input gradients exist everywhere."""

    def __init__(self, hidden=(16, 32, 8), metric="delay", lr=0.02, momentum=0.9,
                 epochs=3000, batch_size=32, val_split=0.2, seed=0):
        self.hidden = tuple(hidden)
        self.metric = metric
        self.lr = lr
        self.momentum = momentum
        self.epochs = epochs
        self.batch_size = batch_size
        self.val_split = val_split
        self.seed = seed

    # forward/backward in normalized-input, encoded-target space -------------

    def _forward(self, Z):
        a = Z
        for W, b in zip(self.weights_[:-1], self.biases_[:-1]):
            a = np.tanh(a @ W + b)
        u = a @ self.weights_[-1] + self.biases_[-1]
        return (u.ravel() * self._u_std) + self._u_mean

    def _forward_grad(self, Z):
        acts = [Z]
        a = Z
        for W, b in zip(self.weights_[:-1], self.biases_[:-1]):
            a = np.tanh(a @ W + b)
            acts.append(a)
        g = np.repeat(self.weights_[-1].T, Z.shape[0], axis=0)  # (n, last_hidden)
        for W, a in zip(reversed(self.weights_[:-1]), reversed(acts[1:])):
            g = ((1.0 - a * a) * g) @ W.T
        return g * self._u_std

    def fit(self, X, y):
        if self.metric not in METRICS:
            raise ValueError(f"metric must be one of {METRICS}, got {self.metric!r}")
        X = check_matrix(X)
        X, y = _drop_nan_targets(X, np.asarray(y, dtype=float))
        if len(y) < MIN_ROWS:
            raise ValueError(f"need at least {MIN_ROWS} training rows, got {len(y)}")
        self._set_box(X)
        Z = self._norm(X, check_box=False)
        u = self._encode_target(y)
        self._u_mean = float(np.mean(u))
        self._u_std = float(np.std(u)) or 1.0
        t = (u - self._u_mean) / self._u_std

        rng = np.random.default_rng(self.seed)
        n = len(y)
        perm = rng.permutation(n)
        n_val = int(round(self.val_split * n))
        val_idx, tr_idx = perm[:n_val], perm[n_val:]
        Ztr, ttr = Z[tr_idx], t[tr_idx]

        widths = (X.shape[1],) + self.hidden + (1,)
        self.layer_widths_ = widths
        self.weights_ = [rng.normal(0.0, np.sqrt(1.0 / a), size=(a, b))
                         for a, b in zip(widths[:-1], widths[1:])]
        self.biases_ = [np.zeros(b) for b in widths[1:]]
        vel_W = [np.zeros_like(W) for W in self.weights_]
        vel_b = [np.zeros_like(b) for b in self.biases_]

        m = len(tr_idx)
        bs = min(self.batch_size or m, m)
        loss = np.inf
        for epoch in range(self.epochs):
            order = rng.permutation(m)
            for lo in range(0, m, bs):
                idx = order[lo:lo + bs]
                zb, tb = Ztr[idx], ttr[idx]
                acts = [zb]
                a = zb
                for W, b in zip(self.weights_[:-1], self.biases_[:-1]):
                    a = np.tanh(a @ W + b)
                    acts.append(a)
                out = (a @ self.weights_[-1] + self.biases_[-1]).ravel()
                err = out - tb
                delta = (2.0 / len(idx)) * err[:, None]
                grads_W, grads_b = [], []
                for li in range(len(self.weights_) - 1, -1, -1):
                    grads_W.append(acts[li].T @ delta)
                    grads_b.append(delta.sum(axis=0))
                    if li > 0:
                        delta = (delta @ self.weights_[li].T) * (1.0 - acts[li] ** 2)
                grads_W.reverse()
                grads_b.reverse()
                for li in range(len(self.weights_)):
                    vel_W[li] = self.momentum * vel_W[li] - self.lr * grads_W[li]
                    vel_b[li] = self.momentum * vel_b[li] - self.lr * grads_b[li]
                    self.weights_[li] += vel_W[li]
                    self.biases_[li] += vel_b[li]
            if epoch % 50 == 0 or epoch == self.epochs - 1:
                pred = np.empty(m)
                a = Ztr
                for W, b in zip(self.weights_[:-1], self.biases_[:-1]):
                    a = np.tanh(a @ W + b)
                pred = (a @ self.weights_[-1] + self.biases_[-1]).ravel()
                loss = float(np.mean((pred - ttr) ** 2))
                if not np.isfinite(loss):
                    raise RuntimeError(
                        f"training diverged: non-finite loss at epoch {epoch} "
                        f"(lr={self.lr}, metric={self.metric})")

        self.fitted_ = True
        tr_rel, tr_max = self._evaluate(X[tr_idx], y[tr_idx])
        if n_val:
            val_rel, val_max = self._evaluate(X[val_idx], y[val_idx])
        else:
            val_rel, val_max = tr_rel, tr_max
        self.report_ = FitReport(
            train_rel_err=tr_rel, val_rel_err=val_rel, epochs_run=self.epochs,
            final_loss=loss, max_abs_err=val_max,
            max_abs_err_all=max(tr_max, val_max), n_train=len(tr_idx), n_val=n_val)
        return self


class LinearSurrogate(BaseSurrogate):
    """Least-squares affine fit, the flat baseline.  Fits the raw target, so
    it can leave the physically valid range; it exists for comparison only."""

    def __init__(self, metric="delay"):
        self.metric = metric

    def _forward(self, Z):
        return Z @ self.coef_ + self.intercept_

    def _forward_grad(self, Z):
        return np.repeat(self.coef_[None, :], Z.shape[0], axis=0)

    def _decode(self, u):        # identity: baseline predicts the raw metric
        return u

    def _decode_grad(self, u):
        return np.ones_like(u)

    def fit(self, X, y):
        X = check_matrix(X)
        X, y = _drop_nan_targets(X, y)
        if len(y) < 2:
            raise ValueError("need at least 2 rows for a linear fit")
        self._set_box(X)
        Z = self._norm(X, check_box=False)
        A = np.hstack([Z, np.ones((len(y), 1))])
        sol, *_ = np.linalg.lstsq(A, y, rcond=None)
        self.coef_, self.intercept_ = sol[:-1], float(sol[-1])
        self.fitted_ = True
        rel, mx = self._evaluate(X, y)
        resid = float(np.mean((np.atleast_1d(self.predict(X)) - y) ** 2))
        self.report_ = FitReport(train_rel_err=rel, val_rel_err=rel, epochs_run=0,
                                 final_loss=resid, max_abs_err=mx, max_abs_err_all=mx,
                                 n_train=len(y), n_val=0)
        return self


class PolynomialSurrogate(BaseSurrogate):
    """Tensor-product polynomial least squares with per-dimension degrees."""

    def __init__(self, degrees=(5, 4), metric="delay"):
        self.degrees = tuple(degrees)
        self.metric = metric

    def _exponents(self):
        return list(product(*(range(d + 1) for d in self.degrees)))

    def _design(self, Z):
        cols = [np.prod([Z[:, i] ** e for i, e in enumerate(exps)], axis=0)
                for exps in self._exponents()]
        return np.stack(cols, axis=1)

    def _forward(self, Z):
        return self._design(Z) @ self.coef_

    def _forward_grad(self, Z):
        n, d = Z.shape
        grad = np.zeros((n, d))
        for coef, exps in zip(self.coef_, self._exponents()):
            for i, e in enumerate(exps):
                if e == 0:
                    continue
                term = coef * e * Z[:, i] ** (e - 1)
                for j, ej in enumerate(exps):
                    if j != i:
                        term = term * Z[:, j] ** ej
                grad[:, i] += term
        return grad

    def _decode(self, u):        # raw-target baseline, like the linear fit
        return u

    def _decode_grad(self, u):
        return np.ones_like(u)

    def fit(self, X, y):
        X = check_matrix(X)
        X, y = _drop_nan_targets(X, y)
        if len(self.degrees) != X.shape[1]:
            raise ValueError(f"degrees {self.degrees} do not match input dim {X.shape[1]}")
        if len(y) < len(self._exponents()):
            raise ValueError("fewer rows than polynomial coefficients")
        self._set_box(X)
        Z = self._norm(X, check_box=False)
        self.coef_, *_ = np.linalg.lstsq(self._design(Z), y, rcond=None)
        self.fitted_ = True
        rel, mx = self._evaluate(X, y)
        resid = float(np.mean((np.atleast_1d(self.predict(X)) - y) ** 2))
        self.report_ = FitReport(train_rel_err=rel, val_rel_err=rel, epochs_run=0,
                                 final_loss=resid, max_abs_err=mx, max_abs_err_all=mx,
                                 n_train=len(y), n_val=0)
        return self


# ---------------------------------------------------------------------------
# operation-style wrappers and serialization
# ---------------------------------------------------------------------------

def fit(table, arch=(16, 32, 8), hyper=None, seed=0, metric="delay"):
    """Fit a neural surrogate on a FitTable or (X, y); returns (model, report)."""
    X, y = (table.X, table.y) if hasattr(table, "X") else table
    hyper = dict(hyper or {})
    model = NeuralSurrogate(hidden=tuple(arch), metric=metric, seed=seed, **hyper)
    model.fit(X, y)
    return model, model.report_


def fit_baseline(table, kind="linear", metric="delay"):
    """Fit a comparison baseline: 'linear' or ('polynomial', deg0, deg1, ...)."""
    X, y = (table.X, table.y) if hasattr(table, "X") else table
    if kind == "linear":
        model = LinearSurrogate(metric=metric)
    elif isinstance(kind, (tuple, list)) and kind[0] == "polynomial":
        model = PolynomialSurrogate(degrees=tuple(kind[1:]), metric=metric)
    else:
        raise ValueError(f"unknown baseline kind {kind!r}")
    model.fit(X, y)
    return model, model.report_


def predict(model, x):
    return model.predict(x)


def input_gradient(model, x):
    return model.input_gradient(x)


_FORMAT_VERSION = 1
_CLASSES = {"NeuralSurrogate": NeuralSurrogate, "LinearSurrogate": LinearSurrogate,
            "PolynomialSurrogate": PolynomialSurrogate}


def save(model, path):
    """Serialize a fitted model to a self-describing .npz archive."""
    model._require_fitted()
    data = {
        "format_version": np.array(_FORMAT_VERSION),
        "class_name": np.array(type(model).__name__),
        "metric": np.array(model.metric),
        "input_lo": model.input_lo_, "input_hi": model.input_hi_,
    }
    if isinstance(model, NeuralSurrogate):
        data["layer_widths"] = np.array(model.layer_widths_)
        data["u_mean"] = np.array(model._u_mean)
        data["u_std"] = np.array(model._u_std)
        data["hyper"] = np.array([model.lr, model.momentum, model.epochs,
                                  model.batch_size, model.val_split, model.seed])
        for i, (W, b) in enumerate(zip(model.weights_, model.biases_)):
            data[f"W{i}"] = W
            data[f"b{i}"] = b
    elif isinstance(model, LinearSurrogate):
        data["coef"] = model.coef_
        data["intercept"] = np.array(model.intercept_)
    else:
        data["degrees"] = np.array(model.degrees)
        data["coef"] = model.coef_
    np.savez(path, **data)


def load(path):
    with np.load(path, allow_pickle=False) as z:
        version = int(z["format_version"])
        if version != _FORMAT_VERSION:
            raise ValueError(f"unsupported model format version {version}")
        cls = _CLASSES[str(z["class_name"])]
        metric = str(z["metric"])
        if cls is NeuralSurrogate:
            widths = tuple(int(w) for w in z["layer_widths"])
            lr, momentum, epochs, batch, split, seed = z["hyper"]
            model = NeuralSurrogate(hidden=widths[1:-1], metric=metric, lr=float(lr),
                                    momentum=float(momentum), epochs=int(epochs),
                                    batch_size=int(batch), val_split=float(split),
                                    seed=int(seed))
            model.layer_widths_ = widths
            nw = len(widths) - 1
            model.weights_ = [z[f"W{i}"] for i in range(nw)]
            model.biases_ = [z[f"b{i}"] for i in range(nw)]
            model._u_mean = float(z["u_mean"])
            model._u_std = float(z["u_std"])
        elif cls is LinearSurrogate:
            model = LinearSurrogate(metric=metric)
            model.coef_ = z["coef"]
            model.intercept_ = float(z["intercept"])
        else:
            model = PolynomialSurrogate(degrees=tuple(int(d) for d in z["degrees"]),
                                        metric=metric)
            model.coef_ = z["coef"]
        model.input_lo_ = z["input_lo"]
        model.input_hi_ = z["input_hi"]
        span = model.input_hi_ - model.input_lo_
        span[span == 0] = 1.0
        model._span = span
        model.fitted_ = True
        return model
