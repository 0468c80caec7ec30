"""scikit-learn style wrappers around the functional core.

Signals follow the sklearn convention of one sample per row: X has shape
(n_samples, p). Internally everything is column-stacked.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .baseline import SmoothedConfig, train_smoothed
from .denoiser import DenoiseConfig, denoise
from .learner import TrainConfig, train
from .linalg import Rng


def _check_signals(X):
    return check_array(X, dtype=np.float64, ensure_2d=True)


class DualFistaDenoiser(TransformerMixin, BaseEstimator):
    """Denoise signals with a fixed analysis dictionary.

    Parameters
    ----------
    dictionary : ndarray of shape (p, m) or None
        Analysis operator (regularization strength absorbed). None or the
        zero matrix means no regularization: transform returns its input.
    tol, max_iter : stopping rule of the dual solve.
    seed : seeds the random dual starting point.
    """

    def __init__(self, dictionary=None, tol=1e-4, max_iter=10000, seed=0):
        self.dictionary = dictionary
        self.tol = tol
        self.max_iter = max_iter
        self.seed = seed

    def fit(self, X, y=None):
        X = _check_signals(X)
        if self.dictionary is not None:
            D = np.asarray(self.dictionary, dtype=np.float64)
            if D.ndim != 2 or D.shape[0] != X.shape[1]:
                raise ValueError(
                    f"dictionary shape {D.shape} incompatible with p={X.shape[1]}")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "n_features_in_")
        X = _check_signals(X)
        if self.dictionary is None:
            return X.copy()
        D = np.asarray(self.dictionary, dtype=np.float64)
        cfg = DenoiseConfig(tol=self.tol, max_itr1=self.max_iter)
        res = denoise(D, X.T, cfg, rng=Rng(self.seed, "init"))
        return res.w_hat.T


def _split_validation(X, y, val_fraction, val_cap):
    n = X.shape[0]
    n_val = max(1, min(val_cap, int(n * val_fraction))) if n > 1 else 0
    pairs = [(y[i], X[i]) for i in range(n)]
    if n_val == 0:
        return pairs, pairs
    return pairs[:n - n_val], pairs[n - n_val:]


class AnalysisDictionaryLearner(TransformerMixin, BaseEstimator):
    """Learn an analysis dictionary from (noisy, clean) signal pairs.

    fit(X, y) takes noisy observations X and ground-truth signals y, both
    (n_samples, p). The tail of the data (up to 256 samples, 10%) is held
    out as a validation set for the loss curves and reference losses in
    `report_`. transform(X) denoises with the learned `dictionary_`.
    """

    def __init__(self, m=None, eta2=1.0, max_itr2=100, batch_sz=64,
                 projection="center-columns", tol=1e-4, max_itr1=1000,
                 init_std=1e-2, seed=0, validation_every=25):
        self.m = m
        self.eta2 = eta2
        self.max_itr2 = max_itr2
        self.batch_sz = batch_sz
        self.projection = projection
        self.tol = tol
        self.max_itr1 = max_itr1
        self.init_std = init_std
        self.seed = seed
        self.validation_every = validation_every

    def fit(self, X, y):
        X = _check_signals(X)
        y = _check_signals(y)
        if X.shape != y.shape:
            raise ValueError("X and y must have identical shapes")
        m = X.shape[1] if self.m is None else int(self.m)
        cfg = TrainConfig(
            m=m, eta2=self.eta2, max_itr2=self.max_itr2,
            batch_sz=self.batch_sz, projection=self.projection,
            denoise_cfg=DenoiseConfig(tol=self.tol, max_itr1=self.max_itr1,
                                      record=True),
            init_std=self.init_std, seed=self.seed,
            validation_every=self.validation_every)
        train_pairs, val_pairs = _split_validation(X, y, 0.1, 256)
        self.dictionary_, self.report_ = train(train_pairs, val_pairs, cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "dictionary_")
        return DualFistaDenoiser(self.dictionary_, tol=self.tol,
                                 seed=self.seed).fit(X).transform(X)


class SmoothedL1DictionaryLearner(TransformerMixin, BaseEstimator):
    """Benchmark learner with the smoothed l1 inner problem, no projection."""

    def __init__(self, m=None, epsilon=1e-3, eta2=1.0, max_itr2=100,
                 batch_sz=64, inner_tol=1e-6, inner_max_iter=5000,
                 init_std=1e-2, seed=0, validation_every=25):
        self.m = m
        self.epsilon = epsilon
        self.eta2 = eta2
        self.max_itr2 = max_itr2
        self.batch_sz = batch_sz
        self.inner_tol = inner_tol
        self.inner_max_iter = inner_max_iter
        self.init_std = init_std
        self.seed = seed
        self.validation_every = validation_every

    def fit(self, X, y):
        X = _check_signals(X)
        y = _check_signals(y)
        if X.shape != y.shape:
            raise ValueError("X and y must have identical shapes")
        m = X.shape[1] if self.m is None else int(self.m)
        cfg = SmoothedConfig(
            epsilon=self.epsilon, inner_tol=self.inner_tol,
            inner_max_iter=self.inner_max_iter, eta2=self.eta2,
            max_itr2=self.max_itr2, batch_sz=self.batch_sz, m=m,
            init_std=self.init_std, seed=self.seed,
            validation_every=self.validation_every)
        train_pairs, val_pairs = _split_validation(X, y, 0.1, 256)
        self.dictionary_, self.report_ = train_smoothed(train_pairs, val_pairs, cfg)
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "dictionary_")
        return DualFistaDenoiser(self.dictionary_, seed=self.seed
                                 ).fit(X).transform(X)
