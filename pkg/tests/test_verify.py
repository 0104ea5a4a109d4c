import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coordlqr import ConstraintPolicy, Ensemble, InitialCondition, make_ensemble
from coordlqr.exceptions import ProblemTooLarge, SingularKKT
from coordlqr.riccati import optimal_cost, synthesize_finite
from coordlqr.sim import simulate
from coordlqr.verify import (
    campaign,
    centralized_oracle,
    costates_closed_form,
    mp_residuals,
    prediction_matrices,
    stabilization_audit,
    verify_instance,
)

from helpers import random_problem


def test_prediction_matrices_reproduce_rollout(rng):
    A, B = rng.normal(size=(3, 3)), rng.normal(size=(3, 2))
    N = 4
    x0, U = rng.normal(size=3), rng.normal(size=(N + 1, 2))
    Phi, Gamma = prediction_matrices(A, B, N)
    xs = [x0]
    for k in range(N):
        xs.append(A @ xs[-1] + B @ U[k])
    np.testing.assert_allclose(Phi @ x0 + Gamma @ U.ravel(), np.concatenate(xs), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_unconstrained_oracle_is_standard_lq(seed):
    ens, policy, N, ic = random_problem(np.random.default_rng(seed))
    sol = centralized_oracle(ens, policy, N, ic, constrained=False)
    P0 = synthesize_finite(ens, policy, N).P[0]
    expected = float(np.einsum("in,nj,ij->", ic.x0, P0, ic.x0))
    assert abs(sol.cost - expected) <= 1e-9 * (1 + expected)
    assert sol.kkt_residual <= 1e-8


def test_example_horizon_ten(example_ensemble, example_policy, example_ic):
    sol = centralized_oracle(example_ensemble, example_policy, 10, example_ic)
    sched = synthesize_finite(example_ensemble, example_policy, 10)
    j = optimal_cost(sched, example_ic, example_ensemble.mu)
    assert abs(sol.cost - j) <= 1e-8 * j
    assert sol.kkt_residual <= 1e-8


def test_single_subsystem_with_riccati_constraint(rng):
    ens = make_ensemble(rng.normal(size=(2, 2)), rng.normal(size=(2, 1)), np.eye(2), 1.0, [1.0])
    N = 5
    free = synthesize_finite(ens, ConstraintPolicy.constant(np.zeros((1, 2))), N)
    policy = ConstraintPolicy(free.K.copy())
    ic = InitialCondition.from_vectors([rng.normal(size=2)])
    sol = centralized_oracle(ens, policy, N, ic)
    traj = simulate(ens, synthesize_finite(ens, policy, N), policy, ic, N + 1)
    U = sol.controls_by_step(1, 1)
    for k in range(N + 1):
        np.testing.assert_allclose(U[k, 0], free.K[k] @ traj.states[k, 0], atol=1e-9)
    # binding-free constraint: no price on it
    assert np.max(np.abs(sol.multipliers)) <= 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_multipliers_are_twice_the_extra_costate(seed):
    ens, policy, N, ic = random_problem(np.random.default_rng(seed))
    sched = synthesize_finite(ens, policy, N)
    traj = simulate(ens, sched, policy, ic, N + 1)
    trace = costates_closed_form(traj, sched, ens)
    sol = centralized_oracle(ens, policy, N, ic)
    scale = 1 + np.max(np.abs(sol.multipliers))
    assert np.max(np.abs(sol.multipliers - 2 * trace.p_extra)) <= 1e-7 * scale


def test_terminal_costates(rng):
    ens, policy, N, ic = random_problem(rng, N=4)
    sched = synthesize_finite(ens, policy, N)
    traj = simulate(ens, sched, policy, ic, N + 1)
    trace = costates_closed_form(traj, sched, ens)
    assert np.all(trace.p[N] == 0.0)
    xbar = traj.avg_state[N]
    expected = -ens.R @ policy.at(N) @ xbar / (ens.mu @ ens.mu)
    np.testing.assert_allclose(trace.p_extra[N], expected, atol=1e-12)


def test_example_costates_satisfy_conditions(example_ensemble, example_policy, example_ic):
    sched = synthesize_finite(example_ensemble, example_policy, 20)
    traj = simulate(example_ensemble, sched, example_policy, example_ic, 21)
    eq, adj = mp_residuals(traj, costates_closed_form(traj, sched, example_ensemble),
                           example_ensemble, example_policy)
    assert eq <= 1e-10 and adj <= 1e-10


def test_perturbed_control_breaks_stationarity(example_ensemble, example_policy, example_ic):
    N, delta = 6, 1e-3
    sched = synthesize_finite(example_ensemble, example_policy, N)
    traj = simulate(example_ensemble, sched, example_policy, example_ic, N + 1)
    trace = costates_closed_form(traj, sched, example_ensemble)
    controls = traj.controls.copy()
    controls[N, 0] += delta
    bumped = type(traj)(**{**traj.__dict__, "controls": controls})
    eq, _ = mp_residuals(bumped, trace, example_ensemble, example_policy)
    assert eq >= delta / 2


def test_zero_system_adjoint_is_trivial():
    ens = make_ensemble(np.zeros((2, 2)), np.zeros((2, 1)), np.zeros((2, 2)), 1.0, [1.0, 1.0])
    policy = ConstraintPolicy.constant(np.zeros((1, 2)))
    ic = InitialCondition(np.ones((2, 2)))
    sched = synthesize_finite(ens, policy, 3)
    traj = simulate(ens, sched, policy, ic, 4)
    trace = costates_closed_form(traj, sched, ens)
    assert np.all(trace.p == 0) and np.all(trace.p_extra == 0)
    assert mp_residuals(traj, trace, ens, policy) == (0.0, 0.0)


def test_problem_too_large(example_ensemble, example_policy, example_ic):
    with pytest.raises(ProblemTooLarge):
        centralized_oracle(example_ensemble, example_policy, 1000, example_ic)


def test_singular_constraints():
    # with any nonzero weight the constraint rows have full rank; only an
    # unvalidated all-zero weight vector can make them degenerate
    ok = make_ensemble(0.0, 1.0, 1.0, 1.0, [1.0])
    raw = Ensemble(A=ok.A, B=ok.B, Q=ok.Q, R=ok.R, mu=np.zeros(1))
    with pytest.raises(SingularKKT):
        centralized_oracle(raw, ConstraintPolicy.constant(1.0), 1, InitialCondition.from_vectors([1.0]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_null_space_moves_increase_cost(seed):
    rng = np.random.default_rng(seed)
    ens, policy, N, ic = random_problem(rng)
    sol = centralized_oracle(ens, policy, N, ic)
    free = centralized_oracle(ens, policy, N, ic, constrained=False)
    assert sol.cost >= free.cost - 1e-9 * (1 + free.cost)


def test_campaign_passes():
    results = campaign(7, count=10)
    assert all(r.passed for r in results), [r.failures for r in results]


def test_zeroed_coordination_gain_is_flagged(example_ensemble, example_policy, example_ic):
    from dataclasses import replace

    sched = synthesize_finite(example_ensemble, example_policy, 10)
    broken = replace(sched, Kbar=np.zeros_like(sched.Kbar))
    res = verify_instance(example_ensemble, example_policy, 10, example_ic, schedule=broken)
    assert not res.passed
    assert res.constraint_residual > 1e-3


def test_audit_on_example_example(example_ensemble, example_ic):
    good = stabilization_audit(example_ensemble, -1.5, example_ic)
    assert good.agree and good.by_spectral_radius == "stabilizable"
    bad = stabilization_audit(example_ensemble, -0.8, example_ic)
    assert bad.agree and bad.by_spectral_radius == "not_stabilizable"
