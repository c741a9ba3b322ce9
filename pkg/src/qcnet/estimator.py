"""scikit-learn wrapper around network training and classification."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .evaluation import classify_many, model_currents
from .network import build_topology
from .train import GdConfig, PsoConfig, TrainingSet, train_network
from .transport import Rates

__all__ = ["QuantumNetworkClassifier", "UnitStateEncoder"]


def _check_unit_rows(X):
    norms = np.linalg.norm(X, axis=1)
    if np.any(np.abs(norms - 1) > 1e-10):
        raise ValueError("every sample must be a unit vector; prepend UnitStateEncoder "
                         "or sklearn.preprocessing.Normalizer to the pipeline")


class UnitStateEncoder(TransformerMixin, BaseEstimator):
    """Min-max scale each feature to [-1, 1], then scale each row to unit length.

    Column ranges are learned in ``fit``. Values outside the fitted range map
    outside [-1, 1] before row normalization.
    """

    def fit(self, X, y=None):
        X = check_array(X)
        self.data_min_ = X.min(axis=0)
        self.data_max_ = X.max(axis=0)
        if np.any(self.data_max_ == self.data_min_):
            raise ValueError("constant feature column cannot be scaled")
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self)
        X = check_array(X)
        Z = 2.0 * (X - self.data_min_) / (self.data_max_ - self.data_min_) - 1.0
        norms = np.linalg.norm(Z, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("a sample maps to the zero vector")
        return Z / norms


class QuantumNetworkClassifier(ClassifierMixin, BaseEstimator):
    """Classifier that routes a unit input vector to one of ``n_classes`` drains.

    Each sample is injected as the source amplitude on the entry layer; the
    predicted class is the drain carrying the largest steady-state current.
    Training runs particle swarm optimization on the hopping amplitudes,
    followed by finite-difference gradient descent.

    Parameters
    ----------
    n_hidden : int
        Size of the hidden layer.
    gamma_in, gamma : float
        Injection and extraction rates.
    dephasing : float
        Local dephasing rate used during training and prediction.
    train_onsite : bool
        Also optimize on-site energies. Needed when there are more features
        than hidden sites, otherwise part of the input never reaches a drain.
    random_state : int
        Seed of the particle swarm.

    Attributes
    ----------
    classes_ : ndarray
        Class labels; ``classes_[k]`` is routed to drain ``k``.
    model_ : TrainedModel
    """

    def __init__(self, n_hidden=4, gamma_in=1.0, gamma=1.0, dephasing=0.0,
                 train_onsite=False, t_max=1.0, swarm_size=50, pso_iterations=300,
                 inertia=0.729, c1=1.49445, c2=1.49445, gd_lr=0.05, gd_iterations=200,
                 gd_h=1e-4, random_state=0):
        self.n_hidden = n_hidden
        self.gamma_in = gamma_in
        self.gamma = gamma
        self.dephasing = dephasing
        self.train_onsite = train_onsite
        self.t_max = t_max
        self.swarm_size = swarm_size
        self.pso_iterations = pso_iterations
        self.inertia = inertia
        self.c1 = c1
        self.c2 = c2
        self.gd_lr = gd_lr
        self.gd_iterations = gd_iterations
        self.gd_h = gd_h
        self.random_state = random_state

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        check_classification_targets(y)
        _check_unit_rows(X)
        self.classes_, codes = np.unique(y, return_inverse=True)
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        spec = build_topology(X.shape[1], self.n_hidden, len(self.classes_),
                              self.train_onsite, self.t_max)
        seed = 0 if self.random_state is None else int(self.random_state)
        pso = PsoConfig(self.swarm_size, self.pso_iterations, self.inertia, self.c1, self.c2,
                        seed)
        gd = GdConfig(self.gd_lr, self.gd_iterations, self.gd_h)
        rates = Rates(self.gamma_in, self.gamma, self.dephasing)
        self.model_ = train_network(spec, TrainingSet(X, codes + 1), pso, gd, rates)
        self.n_features_in_ = X.shape[1]
        self.cost_trace_ = list(self.model_.cost_trace)
        return self

    def exit_currents(self, X):
        """Absolute steady-state currents, shape ``(n_samples, n_classes)``."""
        check_is_fitted(self)
        X = check_array(X)
        _check_unit_rows(X)
        return model_currents(self.model_, X)

    def predict_proba(self, X):
        """Exit currents normalized to sum to one."""
        J = self.exit_currents(X)
        return J / J.sum(axis=1, keepdims=True)

    def decision_function(self, X):
        J = self.predict_proba(X)
        return J[:, 1] - J[:, 0] if J.shape[1] == 2 else J

    def predict(self, X):
        check_is_fitted(self)
        X = check_array(X)
        _check_unit_rows(X)
        return self.classes_[classify_many(self.model_, X) - 1]
