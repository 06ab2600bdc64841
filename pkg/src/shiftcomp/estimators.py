"""Scikit-learn style front ends.

Each wrapper is a thin, stateful shell over the functional core: the
constructor stores hyperparameters untouched (so ``get_params`` and
``set_params`` behave), ``fit`` does the work and hangs results on
trailing-underscore attributes, and inference methods refuse to run
before ``fit``.

The ratio estimators share one calling convention::

    weighter.fit(x_train, x_test)   # x_test: unlabeled target-domain rows
    weighter.weights_               # ratios at the training rows
    weighter.predict(x_new)         # ratios at new points

`ScnClassifier` adds the jointly trained label model on top.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError
from scipy.special import expit

from .baselines import dfw_fit, dfw_score, kde_fit, kliep_fit
from .networks import classify, extract_features
from .rng import make_rng
from .shift import ShiftWeights
from .trainer import ScnConfig, train_scn, train_vanilla, train_weighted
from .validation import as_feature_matrix, as_label_matrix


def _check_fitted(estimator, attr):
    if not hasattr(estimator, attr):
        raise NotFittedError(
            f"{type(estimator).__name__} must be fitted before use")


class KdeShiftWeighter(BaseEstimator):
    """Density-ratio weights from two kernel density estimates."""

    def __init__(self, bandwidth="silverman"):
        self.bandwidth = bandwidth

    def fit(self, x_train, x_test):
        self.model_ = kde_fit(x_train, x_test, bandwidth=self.bandwidth)
        self.weights_ = ShiftWeights(self.model_.weigh(self.model_.x_p), "kde")
        return self

    def predict(self, x):
        _check_fitted(self, "model_")
        return self.model_.weigh(x)


class KliepShiftWeighter(BaseEstimator):
    """Direct density-ratio fit, normalized to mean one on the training rows."""

    def __init__(self, n_centers=100, sigma=None, steps=2000, random_state=0):
        self.n_centers = n_centers
        self.sigma = sigma
        self.steps = steps
        self.random_state = random_state

    def fit(self, x_train, x_test):
        x_train = as_feature_matrix(x_train, "x_train")
        self.model_ = kliep_fit(x_train, x_test, n_centers=self.n_centers,
                                sigma=self.sigma, steps=self.steps,
                                rng=make_rng(self.random_state))
        raw = self.model_.weigh(x_train)
        self.scale_ = raw.mean()
        self.weights_ = ShiftWeights(np.clip(raw / self.scale_, 1e-6, 1e6),
                                     "kliep")
        return self

    def predict(self, x):
        _check_fitted(self, "model_")
        return np.clip(self.model_.weigh(x) / self.scale_, 1e-6, 1e6)


class DfwShiftWeighter(BaseEstimator):
    """Frozen discriminator ratios from a fresh domain classifier."""

    def __init__(self, g_hidden=(64, 128, 64), d_hidden=(64, 32), epochs=60,
                 batch_size=128, lr=1e-3, keep_prob=0.8, random_state=0):
        self.g_hidden = g_hidden
        self.d_hidden = d_hidden
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.keep_prob = keep_prob
        self.random_state = random_state

    def fit(self, x_train, x_test):
        x_train = as_feature_matrix(x_train, "x_train")
        self.g_, self.d_ = dfw_fit(
            x_train, x_test, g_hidden=tuple(self.g_hidden),
            d_hidden=tuple(self.d_hidden), epochs=self.epochs,
            batch_size=self.batch_size, lr=self.lr,
            keep_prob=self.keep_prob, rng=make_rng(self.random_state))
        self.weights_ = ShiftWeights(dfw_score(self.g_, self.d_, x_train),
                                     "dfw")
        return self

    def predict(self, x):
        _check_fitted(self, "g_")
        return dfw_score(self.g_, self.d_, x)


class _NetworkClassifierMixin:
    """Shared inference surface for fitted feature + label networks."""

    def predict_proba(self, x):
        _check_fitted(self, "model_")
        x = as_feature_matrix(x, "x")
        feats = extract_features(self.model_.g, x)
        return expit(classify(self.model_.c, feats).values)

    def predict(self, x, threshold=0.5):
        return (self.predict_proba(x) > threshold).astype(np.float64)


class ScnClassifier(BaseEstimator, _NetworkClassifierMixin):
    """Jointly trained shift weighter and multi-label classifier.

    ``fit`` needs the unlabeled target-domain rows alongside the labeled
    training rows; a labeled validation split enables early stopping.
    """

    def __init__(self, lambda1=1.0, lambda2=0.1, alpha=0.9, variant="full",
                 lr=1e-4, batch_size=128, epochs=100, patience=20,
                 keep_prob=0.8, g_hidden=(64, 128, 64), d_hidden=(64, 32),
                 c_hidden=(64, 32), normalize_weights=False,
                 force_unit_weights=False, random_state=0):
        self.lambda1 = lambda1
        self.lambda2 = lambda2
        self.alpha = alpha
        self.variant = variant
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.keep_prob = keep_prob
        self.g_hidden = g_hidden
        self.d_hidden = d_hidden
        self.c_hidden = c_hidden
        self.normalize_weights = normalize_weights
        self.force_unit_weights = force_unit_weights
        self.random_state = random_state

    def _config(self):
        return ScnConfig(
            lambda1=self.lambda1, lambda2=self.lambda2, alpha=self.alpha,
            variant=self.variant, lr=self.lr, batch_size=self.batch_size,
            epochs=self.epochs, patience=self.patience,
            keep_prob=self.keep_prob, g_hidden=tuple(self.g_hidden),
            d_hidden=tuple(self.d_hidden), c_hidden=tuple(self.c_hidden),
            normalize_weights=self.normalize_weights,
            force_unit_weights=self.force_unit_weights,
            seed=self.random_state)

    def fit(self, x, y, test_features, val_features=None, val_labels=None):
        from .synthdata import Dataset

        x = as_feature_matrix(x, "x")
        y = as_label_matrix(y, x.shape[0], "y")
        train_ds = Dataset(x, y, "train")
        val_ds = None
        if val_features is not None:
            val_features = as_feature_matrix(val_features, "val_features")
            val_ds = Dataset(val_features,
                             as_label_matrix(val_labels, val_features.shape[0],
                                             "val_labels"), "val")
        self.model_, self.report_ = train_scn(train_ds, test_features,
                                              val_ds, self._config())
        self.weights_ = self.report_.final_weights
        return self

    def importance_weights(self, x):
        _check_fitted(self, "model_")
        return self.model_.importance_weights(as_feature_matrix(x, "x"))


class ImportanceWeightedClassifier(BaseEstimator, _NetworkClassifierMixin):
    """Plain importance-weighted training against externally fixed weights.

    With ``sample_weight=None`` this is ordinary unweighted training.
    """

    def __init__(self, lr=1e-4, batch_size=128, epochs=100, patience=20,
                 keep_prob=0.8, g_hidden=(64, 128, 64), c_hidden=(64, 32),
                 pretrain_epochs=20, random_state=0):
        self.lr = lr
        self.batch_size = batch_size
        self.epochs = epochs
        self.patience = patience
        self.keep_prob = keep_prob
        self.g_hidden = g_hidden
        self.c_hidden = c_hidden
        self.pretrain_epochs = pretrain_epochs
        self.random_state = random_state

    def _config(self):
        return ScnConfig(
            lr=self.lr, batch_size=self.batch_size, epochs=self.epochs,
            patience=self.patience, keep_prob=self.keep_prob,
            g_hidden=tuple(self.g_hidden), c_hidden=tuple(self.c_hidden),
            seed=self.random_state)

    def fit(self, x, y, sample_weight=None, val_features=None, val_labels=None):
        from .synthdata import Dataset

        x = as_feature_matrix(x, "x")
        y = as_label_matrix(y, x.shape[0], "y")
        train_ds = Dataset(x, y, "train")
        val_ds = None
        if val_features is not None:
            val_features = as_feature_matrix(val_features, "val_features")
            val_ds = Dataset(val_features,
                             as_label_matrix(val_labels, val_features.shape[0],
                                             "val_labels"), "val")
        if sample_weight is None:
            self.model_, self.report_ = train_vanilla(train_ds, val_ds,
                                                      self._config())
        else:
            self.model_, self.report_ = train_weighted(
                train_ds, sample_weight, val_ds, self._config(),
                pretrain_epochs=self.pretrain_epochs)
        self.weights_ = self.report_.final_weights
        return self
