"""Finite-horizon backward synthesis.

Two value sequences run backward from zero terminal conditions:

* ``P[k]``: the ordinary Riccati difference equation, identical for every
  subsystem.
* ``Pbar[k]``: the coordination sequence that prices the average
  constraint ``ubar[k] = Fbar[k] xbar[k]``.

The resulting distributed law is ::

    u_i[k] = K[k] x_i[k] + mu_i / sum(mu^2) * Kbar[k] xbar[k],   Kbar = Fbar - K
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from .exceptions import DimensionMismatch, InnerMatrixSingular
from .model import ConstraintPolicy, Ensemble, InitialCondition, weighted_average


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + M.T)


def _inner_factor(P_next: np.ndarray, ens: Ensemble):
    S = _sym(ens.R + ens.B.T @ P_next @ ens.B)
    try:
        return S, cho_factor(S, lower=True)
    except LinAlgError as exc:
        raise InnerMatrixSingular(f"R + B'PB is not positive definite: {exc}") from exc


def feedback_gain(P_next: np.ndarray, ens: Ensemble) -> np.ndarray:
    """``K = -(R + B'P B)^{-1} B'P A`` via a Cholesky solve."""
    _, cf = _inner_factor(P_next, ens)
    return -cho_solve(cf, ens.B.T @ P_next @ ens.A)


def riccati_step(P_next: np.ndarray, ens: Ensemble) -> tuple[np.ndarray, np.ndarray]:
    """One backward step of the Riccati difference equation.

    Returns ``(P, K)`` with
    ``P = Q + A'P_next A - A'P_next B (R + B'P_next B)^{-1} B'P_next A``.
    """
    A, B = ens.A, ens.B
    _, cf = _inner_factor(P_next, ens)
    G = B.T @ P_next @ A
    K = -cho_solve(cf, G)
    P = ens.Q + A.T @ P_next @ A + G.T @ K
    return _sym(P), K


def riccati_step_closed_loop(P_next: np.ndarray, K: np.ndarray, ens: Ensemble) -> np.ndarray:
    """Same step written as ``Q + K'RK + (A+BK)' P_next (A+BK)``."""
    Acl = ens.A + ens.B @ K
    return _sym(ens.Q + K.T @ ens.R @ K + Acl.T @ P_next @ Acl)


def pbar_step(
    Pbar_next: np.ndarray, P_next: np.ndarray, Fbar_k: np.ndarray, ens: Ensemble
) -> np.ndarray:
    """One backward step of the coordination recursion.

    The forcing term ``F'SF + G'S^{-1}G + G'F + F'G`` (``S = R + B'P_next B``,
    ``G = B'P_next A``) is evaluated in its completed-square form
    ``(F - K)' S (F - K)``; this keeps it PSD in floating point and makes it
    vanish exactly when ``Fbar_k`` equals the Riccati gain.
    """
    A, B = ens.A, ens.B
    S, cf = _inner_factor(P_next, ens)
    K = -cho_solve(cf, B.T @ P_next @ A)
    D = Fbar_k - K
    M = A + B @ Fbar_k
    return _sym(M.T @ Pbar_next @ M + D.T @ S @ D)


def pbar_forcing_literal(P_next: np.ndarray, Fbar_k: np.ndarray, ens: Ensemble) -> np.ndarray:
    """Forcing term of the coordination recursion, written out term by term.

    Kept separate from :func:`pbar_step` so tests can compare the two forms.
    """
    A, B, R = ens.A, ens.B, ens.R
    S = R + B.T @ P_next @ B
    G = B.T @ P_next @ A
    W = Fbar_k.T @ S @ Fbar_k + G.T @ np.linalg.solve(S, G) + G.T @ Fbar_k + Fbar_k.T @ G
    return _sym(W)


@dataclass(frozen=True, eq=False)
class GainSchedule:
    """Result of :func:`synthesize_finite`.

    ``P`` and ``Pbar`` have shape ``(N+2, n, n)`` (index ``N+1`` is the zero
    terminal value); ``K``, ``Kbar`` and ``Fbar`` have shape ``(N+1, m, n)``.
    """

    N: int
    P: np.ndarray
    Pbar: np.ndarray
    K: np.ndarray
    Kbar: np.ndarray
    Fbar: np.ndarray

    @property
    def steps(self) -> int:
        return self.N + 1


def synthesize_finite(ens: Ensemble, policy: ConstraintPolicy, N: int) -> GainSchedule:
    """Backward recursion from ``P[N+1] = Pbar[N+1] = 0`` down to step 0."""
    if N < 0:
        raise DimensionMismatch(f"horizon must be nonnegative, got {N}")
    policy.check(ens, N)
    Fbar = policy.over(N)
    n, m = ens.n, ens.m
    P = np.zeros((N + 2, n, n))
    Pbar = np.zeros((N + 2, n, n))
    K = np.zeros((N + 1, m, n))
    for k in range(N, -1, -1):
        P[k], K[k] = riccati_step(P[k + 1], ens)
        Pbar[k] = pbar_step(Pbar[k + 1], P[k + 1], Fbar[k], ens)
    return GainSchedule(N=N, P=P, Pbar=Pbar, K=K, Kbar=Fbar - K, Fbar=Fbar)


def value(P: np.ndarray, Pbar: np.ndarray, states, mu) -> float:
    """``sum_i x_i'P x_i + xbar'Pbar xbar / sum(mu^2)`` for states shaped (v, n)."""
    X = np.asarray(states, dtype=float)
    mu = np.asarray(mu, dtype=float)
    xbar = weighted_average(X, mu)
    individual = float(np.einsum("ij,jk,ik->", X, P, X))
    coordination = float(xbar @ Pbar @ xbar) / float(mu @ mu)
    return individual + coordination


def optimal_cost(schedule: GainSchedule, ic: InitialCondition, mu) -> float:
    """Minimal finite-horizon cost from the initial states in ``ic``."""
    X = np.asarray(ic.x0, dtype=float)
    if X.ndim != 2 or X.shape[1] != schedule.P.shape[1] or X.shape[0] != len(mu):
        raise DimensionMismatch(f"initial condition shape {X.shape} does not fit the schedule")
    return value(schedule.P[0], schedule.Pbar[0], X, mu)


def naive_policy_value(ens: Ensemble, policy: ConstraintPolicy, N: int) -> np.ndarray:
    """Value matrices of the decentralized law ``u_i[k] = Fbar[k] x_i[k]``.

    Solves ``S[k] = Q + F'RF + (A+BF)' S[k+1] (A+BF)`` with ``S[N+1] = 0``;
    returns shape ``(N+2, n, n)``. ``S[k]`` coincides with ``P[k] + Pbar[k]``.
    """
    policy.check(ens, N)
    Fbar = policy.over(N)
    S = np.zeros((N + 2, ens.n, ens.n))
    for k in range(N, -1, -1):
        F = Fbar[k]
        M = ens.A + ens.B @ F
        S[k] = _sym(ens.Q + F.T @ ens.R @ F + M.T @ S[k + 1] @ M)
    return S


def lyapunov_gap(schedule: GainSchedule, S: np.ndarray) -> float:
    """Largest relative mismatch ``|S[k] - P[k] - Pbar[k]| / (1 + |S[k]|)``."""
    total = schedule.P + schedule.Pbar
    diff = np.linalg.norm(S - total, axis=(1, 2))
    return float(np.max(diff / (1.0 + np.linalg.norm(S, axis=(1, 2)))))
