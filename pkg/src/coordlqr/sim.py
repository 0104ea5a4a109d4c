"""Closed-loop simulation of the ensemble under the distributed law."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .are import SteadySolution
from .exceptions import DimensionMismatch, HorizonExceeded
from .model import ConstraintPolicy, Ensemble, InitialCondition
from .riccati import GainSchedule


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Recorded closed-loop run of ``steps`` control steps.

    ``states`` and ``avg_state`` carry ``steps + 1`` entries (the state after
    the last control is kept); the per-step arrays carry ``steps``.
    """

    states: np.ndarray  # (steps+1, v, n)
    controls: np.ndarray  # (steps, v, m)
    avg_state: np.ndarray  # (steps+1, n)
    avg_control: np.ndarray  # (steps, m)
    stage_costs: np.ndarray  # (steps,)
    constraint_residuals: np.ndarray  # (steps,)
    Fbar: np.ndarray  # (steps, m, n)

    @property
    def steps(self) -> int:
        return self.controls.shape[0]


def coordination_weights(mu) -> np.ndarray:
    """``mu_i / sum(mu^2)``, the share of the average correction per subsystem."""
    mu = np.asarray(mu, dtype=float)
    return mu / float(mu @ mu)


def average_feedback_coefficients(mu, Kbar) -> np.ndarray:
    """Per-subsystem gains on ``xbar``: ``(mu_i / sum(mu^2)) * Kbar``, shape (v, m, n)."""
    Kbar = np.atleast_2d(np.asarray(Kbar, dtype=float))
    return coordination_weights(mu)[:, None, None] * Kbar[None, :, :]


def _gain_at(gains, k: int):
    if isinstance(gains, GainSchedule):
        return gains.K[k], gains.Kbar[k], gains.Fbar[k]
    return gains.K, gains.Kbar, gains.Fbar


def _record(ens: Ensemble, X: np.ndarray, U: np.ndarray, Fbar: np.ndarray) -> Trajectory:
    mu = ens.mu
    xbar = np.einsum("i,kin->kn", mu, X)
    ubar = np.einsum("i,kim->km", mu, U)
    costs = np.einsum("kin,nj,kij->k", X[:-1], ens.Q, X[:-1]) + np.einsum(
        "kim,mj,kij->k", U, ens.R, U
    )
    target = np.einsum("kmn,kn->km", Fbar, xbar[:-1])
    residuals = np.linalg.norm(ubar - target, axis=1)
    return Trajectory(
        states=X,
        controls=U,
        avg_state=xbar,
        avg_control=ubar,
        stage_costs=costs,
        constraint_residuals=residuals,
        Fbar=Fbar,
    )


def simulate(
    ens: Ensemble,
    gains: GainSchedule | SteadySolution,
    policy: ConstraintPolicy | None,
    ic: InitialCondition,
    steps: int,
) -> Trajectory:
    """Run ``u_i = K x_i + (mu_i/sum(mu^2)) Kbar xbar`` for ``steps`` steps.

    ``policy`` supplies the constraint gains the residuals are measured
    against; ``None`` uses the gains stored with ``gains``.
    """
    ic.check(ens)
    if steps < 0:
        raise DimensionMismatch(f"steps must be nonnegative, got {steps}")
    if isinstance(gains, GainSchedule) and steps > gains.steps:
        raise HorizonExceeded(f"HorizonExceeded: schedule covers {gains.steps} steps, asked for {steps}")

    v, n, m = ens.v, ens.n, ens.m
    share = coordination_weights(ens.mu)
    X = np.zeros((steps + 1, v, n))
    U = np.zeros((steps, v, m))
    F_used = np.zeros((steps, m, n))
    X[0] = ic.x0
    for k in range(steps):
        K, Kbar, F = _gain_at(gains, k)
        if policy is not None:
            F = policy.at(k)
        xbar = ens.mu @ X[k]
        U[k] = X[k] @ K.T + np.outer(share, Kbar @ xbar)
        X[k + 1] = X[k] @ ens.A.T + U[k] @ ens.B.T
        F_used[k] = F
    return _record(ens, X, U, F_used)


def simulate_open_loop(
    ens: Ensemble, ic: InitialCondition, controls, policy: ConstraintPolicy | None = None
) -> Trajectory:
    """Propagate prescribed controls shaped ``(steps, v, m)``.

    Only meant for cross-checks against the optimal law; residuals are
    measured against ``policy`` (zero gains when omitted).
    """
    ic.check(ens)
    U = np.asarray(controls, dtype=float)
    if U.ndim != 3 or U.shape[1:] != (ens.v, ens.m):
        raise DimensionMismatch(f"controls must be (steps, {ens.v}, {ens.m}), got {U.shape}")
    steps = U.shape[0]
    X = np.zeros((steps + 1, ens.v, ens.n))
    X[0] = ic.x0
    for k in range(steps):
        X[k + 1] = X[k] @ ens.A.T + U[k] @ ens.B.T
    if policy is None:
        F = np.zeros((steps, ens.m, ens.n))
    else:
        F = np.stack([policy.at(k) for k in range(steps)]) if steps else np.zeros((0, ens.m, ens.n))
    return _record(ens, X, U, F)


def accumulated_cost(traj: Trajectory) -> float:
    return float(np.sum(traj.stage_costs))


def constraint_check(traj: Trajectory, policy: ConstraintPolicy | None = None) -> float:
    """Largest ``|ubar[k] - Fbar[k] xbar[k]|`` along the run."""
    if traj.steps == 0:
        return 0.0
    if policy is None:
        return float(np.max(traj.constraint_residuals))
    gaps = [
        np.linalg.norm(traj.avg_control[k] - policy.at(k) @ traj.avg_state[k])
        for k in range(traj.steps)
    ]
    return float(max(gaps))


def max_state_norm(traj: Trajectory, k: int = -1) -> float:
    return float(np.max(np.linalg.norm(traj.states[k], axis=1)))


def average_dynamics_gap(ens: Ensemble, traj: Trajectory) -> float:
    """Largest violation of ``xbar[k+1] = A xbar[k] + B ubar[k]``."""
    if traj.steps == 0:
        return 0.0
    pred = traj.avg_state[:-1] @ ens.A.T + traj.avg_control @ ens.B.T
    return float(np.max(np.linalg.norm(traj.avg_state[1:] - pred, axis=1)))

