"""The eight acceptance criteria, each at its stated tolerance.

Every test appends one PASS/FAIL line that is echoed in the terminal summary.
"""

import time

import numpy as np
import pytest

from coordlqr import ConstraintPolicy, InitialCondition
from coordlqr.are import STABILIZABLE, spectral_radius, stability_report, synthesize_steady
from coordlqr.riccati import naive_policy_value, optimal_cost, synthesize_finite, value
from coordlqr.sim import accumulated_cost, average_feedback_coefficients, constraint_check, simulate
from coordlqr.verify import (
    campaign,
    random_instance,
    random_steady_instance,
    stabilization_audit,
)

from conftest import ACCEPTANCE_LINES

CAMPAIGN_SEED = 42
AUDIT_SEED = 2024
COST_SEED = 77


def record(number, title, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def instances(seed, count=50):
    return [random_instance(np.random.default_rng(c)) for c in np.random.SeedSequence(seed).spawn(count)]


@pytest.fixture(scope="module")
def campaign_results():
    t0 = time.perf_counter()
    results = campaign(CAMPAIGN_SEED, 50)
    return results, time.perf_counter() - t0


def test_criterion_1_steady_regression(example_ensemble):
    t0 = time.perf_counter()
    s = synthesize_steady(example_ensemble, -1.5)
    coeffs = average_feedback_coefficients(example_ensemble.mu, s.Kbar).ravel()
    elapsed = time.perf_counter() - t0
    got = np.array([s.P[0, 0], s.Pbar[0, 0], s.K[0, 0], s.Kbar[0, 0]])
    err = max(np.max(np.abs(got - [4.2361, 0.0972, -1.6180, 0.1180])),
              np.max(np.abs(coeffs - [0.0908, 0.0605, 0.0908, 0.0303, 0.1210])))
    record(1, "steady gains and coefficients", err <= 5e-4 and elapsed < 1.0,
           f"max error {err:.2e}, {elapsed:.3f} s")


def test_criterion_2_convergence(example_ensemble, example_ic):
    t0 = time.perf_counter()
    s = synthesize_steady(example_ensemble, -1.5)
    traj = simulate(example_ensemble, s, None, example_ic, 40)
    worst = float(np.max(np.abs(traj.states[40])))
    elapsed = time.perf_counter() - t0
    record(2, "ensemble converges by step 40", worst < 1e-6 and elapsed < 1.0,
           f"max |x_40| = {worst:.2e}, {elapsed:.3f} s")


def test_criterion_3_oracle_equivalence(campaign_results):
    results, elapsed = campaign_results
    cost = max(r.cost_gap for r in results)
    control = max(r.control_gap for r in results)
    record(3, "distributed law equals the KKT optimum",
           cost <= 1e-7 and control <= 1e-6 and elapsed < 30.0,
           f"cost gap {cost:.2e}, control gap {control:.2e}, {elapsed:.2f} s")


def test_criterion_4_maximum_principle(campaign_results):
    results, _ = campaign_results
    eq = max(r.equilibrium_residual for r in results)
    adj = max(r.adjoint_residual for r in results)
    terminal = max(r.terminal_costate for r in results)
    record(4, "stationarity and adjoint residuals",
           eq <= 1e-8 and adj <= 1e-8 and terminal == 0.0,
           f"equilibrium {eq:.2e}, adjoint {adj:.2e}, terminal {terminal:g}")


def test_criterion_5_lyapunov_identity(campaign_results):
    results, _ = campaign_results
    gap = max(r.lyapunov_gap for r in results)
    record(5, "P + Pbar follows the naive-policy Lyapunov recursion", gap <= 1e-9,
           f"max relative gap {gap:.2e} over {len(results)} instances")


def test_criterion_6_stabilization_audit():
    outcomes = []
    for child in np.random.SeedSequence(AUDIT_SEED).spawn(50):
        rng = np.random.default_rng(child)
        ens, Fbar, ic = random_steady_instance(rng)
        outcomes.append(stabilization_audit(ens, Fbar, ic))
    bad = [i for i, o in enumerate(outcomes) if not o.agree]
    stable = sum(o.by_spectral_radius == STABILIZABLE for o in outcomes)
    record(6, "three stabilization verdicts agree", not bad,
           f"{50 - len(bad)}/50 agree, {stable} stabilizable, disagreeing {bad}")


def test_criterion_7_structural_invariants(example_ensemble, example_policy):
    problems = instances(CAMPAIGN_SEED)
    problems.append((example_ensemble, example_policy, 10, InitialCondition.from_vectors([3, 2, 1, 4, 5])))
    pbar_min = np.inf
    mono = np.inf
    constraint = 0.0
    for ens, policy, N, ic in problems:
        sched = synthesize_finite(ens, policy, N)
        w = np.linalg.eigvalsh(sched.Pbar[0])
        pbar_min = min(pbar_min, w[0] / (1 + abs(w[-1])))
        const = ConstraintPolicy.constant(policy.at(0))
        prev = synthesize_finite(ens, const, 0).P[0]
        for M in range(1, N + 2):
            cur = synthesize_finite(ens, const, M).P[0]
            mono = min(mono, np.linalg.eigvalsh(cur - prev)[0] / (1 + np.linalg.norm(cur)))
            prev = cur
        traj = simulate(ens, sched, policy, ic, N + 1)
        constraint = max(constraint, constraint_check(traj, policy))

    coord = 0.0
    kbar = 0.0
    for ens, policy, N, ic in problems:
        free = synthesize_finite(ens, ConstraintPolicy.constant(np.zeros((ens.m, ens.n))), N)
        sched = synthesize_finite(ens, ConstraintPolicy(free.K.copy()), N)
        kbar = max(kbar, float(np.max(np.abs(sched.Kbar))))
        xbar = ens.mu @ ic.x0
        coord = max(coord, abs(float(xbar @ sched.Pbar[0] @ xbar)) / float(ens.mu @ ens.mu))

    ok = pbar_min >= -1e-9 and mono >= -1e-9 and constraint <= 1e-9 and kbar == 0.0 and coord <= 1e-9
    record(7, "structural invariants", ok,
           f"min eig Pbar0 {pbar_min:.1e}, monotonicity {mono:.1e}, constraint {constraint:.1e}, "
           f"Kbar {kbar:g}, coordination cost {coord:.1e}")


def test_criterion_8_infinite_horizon_cost(example_ensemble, example_ic):
    cases = [(example_ensemble, np.array([[-1.5]]), example_ic)]
    rng = np.random.default_rng(COST_SEED)
    while len(cases) < 6:
        ens, Fbar, ic = random_steady_instance(rng)
        if stability_report(ens, Fbar).stabilizable:
            cases.append((ens, Fbar, ic))
    worst = 0.0
    for ens, Fbar, ic in cases:
        s = synthesize_steady(ens, Fbar)
        traj = simulate(ens, s, None, ic, 3000)
        closed = value(s.P, s.Pbar, ic.x0, ens.mu)
        worst = max(worst, abs(accumulated_cost(traj) - closed) / abs(closed))
    record(8, "truncated simulated cost meets the closed form", worst <= 1e-6,
           f"max relative gap {worst:.2e} over {len(cases)} instances")
