"""scikit-learn style wrapper around the synthesis routines.

``fit`` computes the gains, ``predict`` maps a snapshot of all subsystem
states to their controls. Hyper-parameters are the problem data, so
``get_params``/``set_params``/``clone`` behave as for any estimator.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .are import stability_report, synthesize_steady
from .exceptions import ClosedLoopUnstable
from .model import ConstraintPolicy, InitialCondition, Tolerances, make_ensemble
from .riccati import optimal_cost, synthesize_finite, value
from .sim import average_feedback_coefficients, coordination_weights, simulate


class DistributedLQR(BaseEstimator):
    """Optimal distributed controller for an ensemble with an average constraint.

    Parameters
    ----------
    A, B, Q, R : array-like
        Shared subsystem dynamics and stage weights.
    mu : array-like of shape (v,)
        Averaging weights.
    Fbar : array-like
        Constraint gain: one ``(m, n)`` matrix, or ``(horizon+1, m, n)``
        for a time-varying finite-horizon constraint.
    horizon : int or None
        ``None`` solves the infinite-horizon problem.
    tol_are, max_iter : float, int
        Stopping rule of the Riccati value iteration.

    Attributes
    ----------
    K_, Kbar_, P_, Pbar_ : ndarray
        Gains and value matrices (stacked over steps in the finite case).
    report_ : StabilityReport or None
        Set for a constant ``Fbar``.
    """

    def __init__(self, A=2.0, B=1.0, Q=1.0, R=1.0, mu=(1.0,), Fbar=0.0, horizon=None,
                 tol_are=1e-10, max_iter=10000):
        self.A = A
        self.B = B
        self.Q = Q
        self.R = R
        self.mu = mu
        self.Fbar = Fbar
        self.horizon = horizon
        self.tol_are = tol_are
        self.max_iter = max_iter

    def _policy(self):
        F = np.asarray(self.Fbar, dtype=float)
        return ConstraintPolicy(F) if F.ndim == 3 else ConstraintPolicy.constant(F)

    def fit(self, X=None, y=None):
        """Synthesize the gains. ``X`` and ``y`` are ignored."""
        ens = make_ensemble(self.A, self.B, self.Q, self.R, self.mu)
        policy = self._policy().check(ens)
        tol = Tolerances(tol_are=self.tol_are, max_iter=self.max_iter)
        self.ensemble_ = ens
        self.policy_ = policy
        self.report_ = stability_report(ens, policy.gains, tol) if policy.is_constant else None
        if self.horizon is None:
            if not policy.is_constant:
                raise ValueError("the infinite horizon needs a constant Fbar")
            if not self.report_.stabilizable:
                raise ClosedLoopUnstable(
                    f"ClosedLoopUnstable: rho(A + B Fbar) = "
                    f"{self.report_.spectral_radius_closed_loop:.6g}"
                )
            self.solution_ = synthesize_steady(ens, policy.gains, tol)
        else:
            self.solution_ = synthesize_finite(ens, policy, int(self.horizon))
        self.K_ = self.solution_.K
        self.Kbar_ = self.solution_.Kbar
        self.P_ = self.solution_.P
        self.Pbar_ = self.solution_.Pbar
        return self

    def _states(self, X):
        ens = self.ensemble_
        X = check_array(X, ensure_2d=False)
        X = X.reshape(ens.v, -1)
        if X.shape[1] != ens.n:
            raise ValueError(f"expected {ens.v} states of length {ens.n}, got shape {X.shape}")
        return X

    def predict(self, X, step=0):
        """Controls ``(v, m)`` for the subsystem states ``X`` of shape ``(v, n)``."""
        check_is_fitted(self, "solution_")
        X = self._states(X)
        if self.horizon is None:
            K, Kbar = self.K_, self.Kbar_
        else:
            K, Kbar = self.K_[step], self.Kbar_[step]
        xbar = self.ensemble_.mu @ X
        return X @ K.T + np.outer(coordination_weights(self.ensemble_.mu), Kbar @ xbar)

    def cost(self, X):
        """Optimal cost from initial states ``X``."""
        check_is_fitted(self, "solution_")
        X = self._states(X)
        if self.horizon is None:
            return value(self.P_, self.Pbar_, X, self.ensemble_.mu)
        return optimal_cost(self.solution_, InitialCondition(X), self.ensemble_.mu)

    def simulate(self, X, steps=None):
        check_is_fitted(self, "solution_")
        if steps is None:
            steps = 40 if self.horizon is None else int(self.horizon) + 1
        ic = InitialCondition(self._states(X))
        return simulate(self.ensemble_, self.solution_, None, ic, steps)

    @property
    def average_feedback_coefficients_(self):
        check_is_fitted(self, "solution_")
        Kbar = self.Kbar_ if self.horizon is None else self.Kbar_[0]
        return average_feedback_coefficients(self.ensemble_.mu, Kbar)
