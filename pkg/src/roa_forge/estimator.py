"""scikit-learn style wrappers around the value, training and certification stages."""
from __future__ import annotations

from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import certify as cert
from . import dynamics as dyn
from . import lyap_init, nn, value
from .set_geometry import embed_singletons


def _system(system) -> dyn.SystemSpec:
    return dyn.get_system(system) if isinstance(system, str) else system


def prepare_system(system, scenario: int = 2, roa: Optional[lyap_init.EllipsoidRoa] = None):
    """``(system with P attached and scenario applied, initial ROA)``.

    The initial ROA is built for the full disturbance set, so it remains
    valid when Scenario 1 collapses W to its center.
    """
    base = _system(system)
    roa = lyap_init.initial_roa(base) if roa is None else roa
    sys = dyn.with_lyapunov_matrix(base, roa.P) if base.alpha_kind == dyn.ALPHA_SCALED_NU else base
    return dyn.with_scenario(sys, scenario), roa


def _check_states(sys, X):
    X = check_array(X, dtype=float)
    if X.shape[1] != sys.n:
        raise ValueError(f"expected {sys.n} state columns, got {X.shape[1]}")
    return X


class ValueTargetTransformer(TransformerMixin, BaseEstimator):
    """Maps states to finite-horizon targets ``1 - exp(-V_Ns)``."""

    def __init__(self, system="two_machine", scenario=2, Ns=500, Ntraj=1000, v_cap=50.0, seed_base=0):
        self.system = system
        self.scenario = scenario
        self.Ns = Ns
        self.Ntraj = Ntraj
        self.v_cap = v_cap
        self.seed_base = seed_base

    def fit(self, X=None, y=None):
        self.system_, self.roa_ = prepare_system(self.system, self.scenario)
        self.value_config_ = value.ValueConfig(self.Ns, self.Ntraj, self.v_cap, self.seed_base)
        if X is not None:
            self.n_features_in_ = _check_states(self.system_, X).shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "system_")
        X = _check_states(self.system_, X)
        targets, _ = value.w_targets(self.system_, X, self.value_config_)
        return targets[:, None]


class NeuralValueRegressor(RegressorMixin, BaseEstimator):
    """Physics-informed tanh MLP fit to ``(state, target)`` pairs.

    ``fit`` adds the Bellman residual on ``n_physics`` collocation points
    drawn from the system domain.
    """

    def __init__(self, system="two_machine", scenario=2, hidden=None, epochs=5000, lr=1e-3,
                 lr_final=None, lambda_d=0.1, lambda_pi=1.0, n_physics=5000, seed=0):
        self.system = system
        self.scenario = scenario
        self.hidden = hidden
        self.epochs = epochs
        self.lr = lr
        self.lr_final = lr_final
        self.lambda_d = lambda_d
        self.lambda_pi = lambda_pi
        self.n_physics = n_physics
        self.seed = seed

    def _train_config(self, n_data):
        hidden = tuple(self.hidden) if self.hidden else nn.default_hidden(self.system_)
        return nn.TrainConfig(lambda_d=self.lambda_d, lambda_pi=self.lambda_pi, Nd=n_data,
                              Npi=self.n_physics, epochs=self.epochs, lr=self.lr,
                              lr_final=self.lr_final, seed=self.seed, hidden=hidden)

    def fit(self, X, y):
        self.system_, self.roa_ = prepare_system(self.system, self.scenario)
        X, y = check_X_y(X, y, dtype=float, y_numeric=True)
        X = _check_states(self.system_, X)
        cfg = self._train_config(X.shape[0])
        self.model_, self.report_ = nn.train(self.system_, cfg, value.ValueConfig(), data=(X, y))
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "model_")
        X = _check_states(self.system_, X)
        return nn.forward(self.model_, embed_singletons(X))

    def bellman_residual(self, X):
        """Pointwise residual of the Bellman equation for the fitted network."""
        check_is_fitted(self, "model_")
        X = _check_states(self.system_, X)
        phys = nn.PhysicsBatch.from_points(self.system_, X)
        o1 = nn.forward(self.model_, phys.Z_point)
        o2 = nn.forward(self.model_, phys.Z_image)
        return o1 - o2 - phys.xi * (1.0 - o2)


class RoaCertifier(BaseEstimator):
    """Certifies ``{x in Xv : omega(x) <= omega2}`` for a fitted network.

    ``fit`` runs estimation, branch-and-bound verification and bisection;
    ``predict`` reports membership in the certified region (only when every
    condition was certified; otherwise it falls back to the ellipsoid
    ``nu <= c1``).
    """

    def __init__(self, model=None, system="two_machine", scenario=2, samples=100_000,
                 max_boxes=1_000_000, max_depth=40, slack=0.0, seed=0):
        self.model = model
        self.system = system
        self.scenario = scenario
        self.samples = samples
        self.max_boxes = max_boxes
        self.max_depth = max_depth
        self.slack = slack
        self.seed = seed

    def fit(self, X=None, y=None):
        model = self.model.model_ if isinstance(self.model, NeuralValueRegressor) else self.model
        if model is None:
            raise ValueError("RoaCertifier needs a trained model")
        self.system_, self.roa_ = prepare_system(self.system, self.scenario)
        cfg = cert.CertifyConfig(samples=self.samples, max_boxes=self.max_boxes,
                                 max_depth=self.max_depth, slack=self.slack, seed=self.seed)
        self.model_ = model
        self.report_ = cert.certify(self.system_, model, self.roa_, cfg)
        self.c1_ = self.report_.c1
        self.c2_ = self.report_.c2
        self.omega1_ = self.report_.omega1
        self.omega2_ = self.report_.omega2
        self.certified_ = self.report_.all_certified
        return self

    def predict(self, X):
        check_is_fitted(self, "report_")
        X = _check_states(self.system_, X)
        in_domain = np.all((X >= self.system_.domain_lo) & (X <= self.system_.domain_hi), axis=1)
        if self.certified_:
            inside = nn.omega_nn(self.model_, self.system_, X) <= self.omega2_
        else:
            inside = self.roa_.nu(X) <= self.c1_
        return inside & in_domain
