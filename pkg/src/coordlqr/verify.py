"""Independent checks of the distributed optimum.

Two routes that share nothing with the backward recursion except the
problem data:

* :func:`centralized_oracle` condenses the finite-horizon problem into one
  equality-constrained QP over all controls and solves its KKT system.
* :func:`costates_closed_form` / :func:`mp_residuals` rebuild the adjoint
  variables from the value matrices and measure how well the first-order
  (stationarity and adjoint) conditions hold along a trajectory.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .are import (
    NOT_STABILIZABLE,
    STABILIZABLE,
    SteadySolution,
    gains,
    is_observable,
    solve_are,
    spectral_radius,
    stability_report,
)
from .exceptions import NoConvergence, ProblemTooLarge, SingularKKT
from .model import (
    DEFAULT_TOLERANCES,
    ConstraintPolicy,
    Ensemble,
    InitialCondition,
    Tolerances,
    make_ensemble,
)
from .riccati import GainSchedule, feedback_gain, lyapunov_gap, naive_policy_value, optimal_cost, synthesize_finite
from .sim import Trajectory, accumulated_cost, coordination_weights, simulate

MAX_UNKNOWNS = 4000


@dataclass(frozen=True, eq=False)
class OracleSolution:
    """Minimizer of the condensed QP.

    ``controls`` is stacked step-major (``u_0^1, ..., u_0^v, u_1^1, ...``);
    ``multipliers`` has one ``m``-block per constrained step.
    """

    controls: np.ndarray
    cost: float
    kkt_residual: float
    multipliers: np.ndarray

    def controls_by_step(self, v: int, m: int) -> np.ndarray:
        return self.controls.reshape(-1, v, m)


def prediction_matrices(A: np.ndarray, B: np.ndarray, N: int):
    """``Phi`` and ``Gamma`` with ``[x_0; ...; x_N] = Phi x_0 + Gamma [u_0; ...; u_N]``."""
    n, m = B.shape
    powers = [np.eye(n)]
    for _ in range(N):
        powers.append(A @ powers[-1])
    Phi = np.vstack(powers)
    Gamma = np.zeros(((N + 1) * n, (N + 1) * m))
    for k in range(1, N + 1):
        for j in range(k):
            Gamma[k * n:(k + 1) * n, j * m:(j + 1) * m] = powers[k - 1 - j] @ B
    return Phi, Gamma


def centralized_oracle(
    ens: Ensemble,
    policy: ConstraintPolicy,
    N: int,
    ic: InitialCondition,
    constrained: bool = True,
    tol: Tolerances = DEFAULT_TOLERANCES,
    max_unknowns: int = MAX_UNKNOWNS,
) -> OracleSolution:
    """Solve the finite-horizon problem as one dense KKT system.

    States are eliminated so every subsystem contributes the same Hessian
    block; the ``(N+1) m`` average constraints couple the blocks through the
    weights. ``constrained=False`` drops the constraint rows, which leaves
    ``v`` independent standard LQ problems.
    """
    ic.check(ens)
    policy.check(ens, N)
    n, m, v = ens.n, ens.m, ens.v
    nu = v * m * (N + 1)
    nc = m * (N + 1) if constrained else 0
    if nu + nc > max_unknowns:
        raise ProblemTooLarge(f"ProblemTooLarge: {nu + nc} KKT unknowns exceed {max_unknowns}")

    Phi, Gamma = prediction_matrices(ens.A, ens.B, N)
    Qt = np.kron(np.eye(N + 1), ens.Q)
    Rt = np.kron(np.eye(N + 1), ens.R)
    H = Gamma.T @ Qt @ Gamma + Rt
    X0 = ic.x0  # (v, n)
    g = (Gamma.T @ Qt @ Phi @ X0.T).T  # (v, (N+1) m)
    const = float(np.einsum("ia,ab,ib->", X0 @ Phi.T, Qt, X0 @ Phi.T))

    Hfull = np.kron(np.eye(v), H)
    gfull = g.reshape(-1)
    if constrained:
        Fbar = policy.over(N)
        Ft = linalg.block_diag(*Fbar)
        Cblk = np.eye((N + 1) * m) - Ft @ Gamma
        C = np.hstack([mu_i * Cblk for mu_i in ens.mu])
        d = Ft @ Phi @ (ens.mu @ X0)
        s = np.linalg.svd(C, compute_uv=False)
        if s[-1] <= tol.tol_rank * s[0]:
            raise SingularKKT("SingularKKT: average constraints are rank deficient")
        KKT = np.block([[2.0 * Hfull, C.T], [C, np.zeros((nc, nc))]])
        rhs = np.concatenate([-2.0 * gfull, d])
    else:
        KKT = 2.0 * Hfull
        rhs = -2.0 * gfull
    try:
        z = linalg.solve(KKT, rhs, assume_a="sym")
    except (linalg.LinAlgError, ValueError) as exc:
        raise SingularKKT(f"SingularKKT: {exc}") from exc
    resid = float(np.linalg.norm(KKT @ z - rhs) / (np.linalg.norm(KKT) * (1.0 + np.linalg.norm(z))))

    U = z[:nu].reshape(v, N + 1, m)
    cost = float(sum(U[i].reshape(-1) @ H @ U[i].reshape(-1) + 2.0 * g[i] @ U[i].reshape(-1)
                     for i in range(v)) + const)
    controls = U.transpose(1, 0, 2).reshape(-1)
    multipliers = z[nu:].reshape(N + 1, m) if constrained else np.zeros((0, m))
    return OracleSolution(controls=controls, cost=cost, kkt_residual=resid, multipliers=multipliers)


@dataclass(frozen=True, eq=False)
class CostateTrace:
    p: np.ndarray  # (N+1, v, n)
    p_extra: np.ndarray  # (N+1, m)


def costates_closed_form(traj: Trajectory, schedule: GainSchedule, ens: Ensemble, mu=None) -> CostateTrace:
    """Adjoint variables implied by the value matrices along ``traj``.

    For ``k = 0..N``::

        p_k^i    = P[k+1] x_{k+1}^i + mu_i/sum(mu^2) Pbar[k+1] xbar_{k+1}
        p_k^{v+1} = -1/sum(mu^2) [(R + B'T B) Fbar_k + B'T A] xbar_k,  T = P[k+1] + Pbar[k+1]
    """
    mu = ens.mu if mu is None else np.asarray(mu, dtype=float)
    N = schedule.N
    if traj.steps < N + 1:
        raise ValueError(f"trajectory has {traj.steps} steps, schedule needs {N + 1}")
    share = coordination_weights(mu)
    A, B, R = ens.A, ens.B, ens.R
    p = np.zeros((N + 1, ens.v, ens.n))
    p_extra = np.zeros((N + 1, ens.m))
    for k in range(N + 1):
        Pn, Pbn = schedule.P[k + 1], schedule.Pbar[k + 1]
        p[k] = traj.states[k + 1] @ Pn.T + np.outer(share, Pbn @ traj.avg_state[k + 1])
        T = Pn + Pbn
        p_extra[k] = -((R + B.T @ T @ B) @ schedule.Fbar[k] + B.T @ T @ A) @ traj.avg_state[k] / float(mu @ mu)
    return CostateTrace(p=p, p_extra=p_extra)


def mp_residuals(
    traj: Trajectory, trace: CostateTrace, ens: Ensemble, policy: ConstraintPolicy, mu=None
) -> tuple[float, float]:
    """Largest stationarity and adjoint-equation violations.

    Stationarity: ``R u_k^i + B'p_k^i + mu_i p_k^{v+1} = 0`` for ``k = 0..N``.
    Adjoint: ``p_{k-1}^i = Q x_k^i + A'p_k^i - mu_i Fbar_k' p_k^{v+1}`` for ``k = 1..N``.
    """
    mu = ens.mu if mu is None else np.asarray(mu, dtype=float)
    A, B, Q, R = ens.A, ens.B, ens.Q, ens.R
    N = trace.p.shape[0] - 1
    eq = 0.0
    for k in range(N + 1):
        r = traj.controls[k] @ R.T + trace.p[k] @ B + np.outer(mu, trace.p_extra[k])
        eq = max(eq, float(np.max(np.linalg.norm(r, axis=1))))
    adj = 0.0
    for k in range(1, N + 1):
        F = policy.at(k)
        rhs = traj.states[k] @ Q.T + trace.p[k] @ A - np.outer(mu, F.T @ trace.p_extra[k])
        adj = max(adj, float(np.max(np.linalg.norm(trace.p[k - 1] - rhs, axis=1))))
    return eq, adj


# --- randomized instances -------------------------------------------------


def _nonzero_weights(rng: np.random.Generator, v: int) -> np.ndarray:
    while True:
        mu = rng.uniform(-1.0, 1.0, v)
        if mu @ mu > 1e-3:
            return mu


def random_instance(
    rng: np.random.Generator, n_max: int = 3, m_max: int = 3, v_max: int = 4, N_max: int = 8
):
    """Random finite-horizon problem: ``(ens, policy, N, ic)``.

    Entries are uniform in [-1, 1]; ``Q = G'G`` and ``R = H'H + I``; the
    constraint gains vary with the step.
    """
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    v = int(rng.integers(1, v_max + 1))
    N = int(rng.integers(0, N_max + 1))
    G = rng.uniform(-1.0, 1.0, (n, n))
    H = rng.uniform(-1.0, 1.0, (m, m))
    ens = make_ensemble(
        A=rng.uniform(-1.0, 1.0, (n, n)),
        B=rng.uniform(-1.0, 1.0, (n, m)),
        Q=G.T @ G,
        R=H.T @ H + np.eye(m),
        mu=_nonzero_weights(rng, v),
    )
    policy = ConstraintPolicy(rng.uniform(-1.0, 1.0, (N + 1, m, n)))
    ic = InitialCondition(rng.uniform(-1.0, 1.0, (v, n)))
    return ens, policy, N, ic


def random_steady_instance(
    rng: np.random.Generator,
    n_max: int = 3,
    m_max: int = 3,
    v_max: int = 4,
    margin: float = 0.05,
    max_tries: int = 1000,
):
    """Random observable instance with a constant ``Fbar``: ``(ens, Fbar, ic)``.

    ``rho(A + B Fbar)`` is kept at least ``margin`` away from 1 and the
    optimal loop ``A + BK`` (when it exists) has radius at most
    ``1 - margin/2``, so every verdict is decidable in a bounded number of
    steps. About one instance in ten has ``B = 0``.
    """
    for _ in range(max_tries):
        n = int(rng.integers(1, n_max + 1))
        m = int(rng.integers(1, m_max + 1))
        v = int(rng.integers(1, v_max + 1))
        G = rng.uniform(-1.0, 1.0, (n, n))
        H = rng.uniform(-1.0, 1.0, (m, m))
        B = rng.uniform(-1.0, 1.0, (n, m)) if rng.random() > 0.1 else np.zeros((n, m))
        ens = make_ensemble(
            A=rng.uniform(-1.5, 1.5, (n, n)),
            B=B,
            Q=G.T @ G,
            R=H.T @ H + np.eye(m),
            mu=_nonzero_weights(rng, v),
        )
        Fbar = rng.uniform(-1.5, 1.5, (m, n))
        ic = InitialCondition(rng.uniform(-1.0, 1.0, (v, n)))
        if not is_observable(ens):
            continue
        if abs(spectral_radius(ens.A + ens.B @ Fbar) - 1.0) < margin:
            continue
        try:
            P = solve_are(ens, check_pd=False)
        except NoConvergence:
            if spectral_radius(ens.A) < 1.0 + margin:
                continue
            return ens, Fbar, ic
        K, _ = gains(P, Fbar, ens)
        if spectral_radius(ens.A + ens.B @ K) > 1.0 - margin / 2:
            continue
        return ens, Fbar, ic
    raise RuntimeError("could not draw a well-separated instance")


# --- composite checks -----------------------------------------------------


@dataclass(frozen=True)
class VerificationThresholds:
    cost_gap: float = 1e-7
    control_gap: float = 1e-6
    mp_residual: float = 1e-8
    constraint: float = 1e-9
    lyapunov: float = 1e-9


@dataclass(frozen=True)
class VerificationResult:
    cost_distributed: float
    cost_closed_form: float
    cost_oracle: float
    cost_gap: float
    control_gap: float
    equilibrium_residual: float
    adjoint_residual: float
    terminal_costate: float
    constraint_residual: float
    lyapunov_gap: float
    kkt_residual: float
    thresholds: VerificationThresholds = field(default_factory=VerificationThresholds)

    @property
    def failures(self) -> list[str]:
        t = self.thresholds
        out = []
        if not self.cost_gap <= t.cost_gap:
            out.append(f"cost gap {self.cost_gap:.3g} > {t.cost_gap:g}")
        if not self.control_gap <= t.control_gap:
            out.append(f"control gap {self.control_gap:.3g} > {t.control_gap:g}")
        if not max(self.equilibrium_residual, self.adjoint_residual) <= t.mp_residual:
            out.append(
                f"maximum-principle residuals ({self.equilibrium_residual:.3g}, "
                f"{self.adjoint_residual:.3g}) > {t.mp_residual:g}"
            )
        if self.terminal_costate != 0.0:
            out.append(f"terminal costate {self.terminal_costate:.3g} is not zero")
        if not self.constraint_residual <= t.constraint:
            out.append(f"constraint residual {self.constraint_residual:.3g} > {t.constraint:g}")
        if not self.lyapunov_gap <= t.lyapunov:
            out.append(f"P + Pbar differs from the Lyapunov recursion by {self.lyapunov_gap:.3g}")
        return out

    @property
    def passed(self) -> bool:
        return not self.failures


def verify_instance(
    ens: Ensemble,
    policy: ConstraintPolicy,
    N: int,
    ic: InitialCondition,
    schedule: GainSchedule | None = None,
    tol: Tolerances = DEFAULT_TOLERANCES,
    thresholds: VerificationThresholds = VerificationThresholds(),
) -> VerificationResult:
    """Compare the distributed law against the oracle and the adjoint conditions.

    ``schedule`` defaults to the synthesized one; passing a modified schedule
    is how deliberately broken gains are exercised.
    """
    reference = synthesize_finite(ens, policy, N)
    schedule = reference if schedule is None else schedule
    traj = simulate(ens, schedule, policy, ic, N + 1)
    oracle = centralized_oracle(ens, policy, N, ic, tol=tol)

    j_sim = accumulated_cost(traj)
    j_closed = optimal_cost(schedule, ic, ens.mu)
    j_oracle = oracle.cost
    cost_gap = max(abs(j_sim - j_oracle), abs(j_closed - j_oracle)) / (1.0 + abs(j_oracle))
    control_gap = float(np.max(np.abs(traj.controls.reshape(-1) - oracle.controls)))

    trace = costates_closed_form(traj, schedule, ens)
    eq, adj = mp_residuals(traj, trace, ens, policy)
    S = naive_policy_value(ens, policy, N)
    return VerificationResult(
        cost_distributed=j_sim,
        cost_closed_form=j_closed,
        cost_oracle=j_oracle,
        cost_gap=cost_gap,
        control_gap=control_gap,
        equilibrium_residual=eq,
        adjoint_residual=adj,
        terminal_costate=float(np.max(np.abs(trace.p[N]))),
        constraint_residual=float(np.max(traj.constraint_residuals)),
        lyapunov_gap=lyapunov_gap(schedule, S),
        kkt_residual=oracle.kkt_residual,
        thresholds=thresholds,
    )


def campaign(seed: int, count: int = 50, tol: Tolerances = DEFAULT_TOLERANCES) -> list[VerificationResult]:
    """Verify ``count`` random instances drawn from independent child seeds."""
    results = []
    for child in np.random.SeedSequence(seed).spawn(count):
        ens, policy, N, ic = random_instance(np.random.default_rng(child))
        results.append(verify_instance(ens, policy, N, ic, tol=tol))
    return results


@dataclass(frozen=True)
class AuditOutcome:
    by_spectral_radius: str
    by_riccati: str
    by_simulation: str
    spectral_radius: float

    @property
    def agree(self) -> bool:
        return self.by_spectral_radius == self.by_riccati == self.by_simulation


def _decays(ens: Ensemble, Fbar: np.ndarray, ic: InitialCondition, steps: int) -> bool:
    try:
        K = feedback_gain(solve_are(ens, check_pd=False), ens)
    except NoConvergence:
        # no steady gain exists; any constant feedback is as good a probe
        K = synthesize_finite(ens, ConstraintPolicy.constant(Fbar), 50).K[0]
    law = SteadySolution(P=np.zeros_like(ens.A), Pbar=np.zeros_like(ens.A),
                         K=K, Kbar=Fbar - K, Fbar=Fbar, iterations=0)
    with np.errstate(over="ignore", invalid="ignore"):
        traj = simulate(ens, law, None, ic, steps)
        start = float(np.max(np.linalg.norm(traj.states[0], axis=1)))
        end = np.linalg.norm(traj.states[-1], axis=1)
    return bool(np.all(np.isfinite(end)) and np.max(end) <= 1e-8 * max(1.0, start))


def stabilization_audit(
    ens: Ensemble, Fbar, ic: InitialCondition, steps: int = 1500, tol: Tolerances = DEFAULT_TOLERANCES
) -> AuditOutcome:
    """Three independent verdicts on whether the ensemble can be stabilized."""
    Fbar = ConstraintPolicy.constant(Fbar).check(ens).gains
    report = stability_report(ens, Fbar, tol)
    by_are = report.are_solved and report.p_positive_definite and report.p_plus_pbar_positive_definite
    return AuditOutcome(
        by_spectral_radius=report.verdict,
        by_riccati=STABILIZABLE if by_are else NOT_STABILIZABLE,
        by_simulation=STABILIZABLE if _decays(ens, Fbar, ic, steps) else NOT_STABILIZABLE,
        spectral_radius=report.spectral_radius_closed_loop,
    )
