import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coordlqr.exceptions import (
    DimensionMismatch,
    LengthMismatch,
    NotSymmetric,
    QNotPSD,
    RNotPD,
    ZeroWeights,
)
from coordlqr.model import (
    ConstraintPolicy,
    Ensemble,
    InitialCondition,
    make_ensemble,
    validate,
    weighted_average,
)


def test_example_data_is_valid(example_ensemble):
    assert (example_ensemble.n, example_ensemble.m, example_ensemble.v) == (1, 1, 5)
    assert example_ensemble.mu_sq_sum == pytest.approx(0.39)


@pytest.mark.parametrize(
    "kwargs, error",
    [
        (dict(R=0.0), RNotPD),
        (dict(R=-1.0), RNotPD),
        (dict(Q=-1.0), QNotPSD),
        (dict(mu=[0.0, 0.0, 0.0]), ZeroWeights),
        (dict(B=[[1.0], [0.0]]), DimensionMismatch),
        (dict(Q=np.eye(2)), DimensionMismatch),
        (dict(R=np.eye(2)), DimensionMismatch),
        (dict(A=[[1.0, 2.0]]), DimensionMismatch),
    ],
)
def test_validate_rejects(kwargs, error):
    data = dict(A=2.0, B=1.0, Q=1.0, R=1.0, mu=[1.0])
    data.update(kwargs)
    with pytest.raises(error):
        make_ensemble(**data)


def test_error_names_appear_in_messages():
    with pytest.raises(RNotPD, match="RNotPD"):
        make_ensemble(A=2.0, B=1.0, Q=1.0, R=0.0, mu=[1.0])


def test_tiny_asymmetry_is_symmetrized_large_is_rejected():
    Q = np.array([[2.0, 1.0], [1.0 + 1e-13, 2.0]])
    ens = make_ensemble(A=np.eye(2), B=np.ones((2, 1)), Q=Q, R=1.0, mu=[1.0])
    np.testing.assert_array_equal(ens.Q, ens.Q.T)
    with pytest.raises(NotSymmetric):
        make_ensemble(A=np.eye(2), B=np.ones((2, 1)), Q=[[2.0, 1.0], [0.5, 2.0]], R=1.0, mu=[1.0])


def test_negative_and_large_weights_allowed():
    ens = make_ensemble(A=1.0, B=1.0, Q=1.0, R=1.0, mu=[-2.0, 3.5])
    assert ens.mu_sq_sum == pytest.approx(16.25)


def test_psd_boundary_accepts_singular_q():
    make_ensemble(A=np.eye(2), B=np.ones((2, 1)), Q=np.diag([1.0, 0.0]), R=1.0, mu=[1.0])


def test_weighted_average_examples():
    assert weighted_average([3, 2, 1, 4, 5], [0.3, 0.2, 0.3, 0.1, 0.4]) == pytest.approx([4.0])
    np.testing.assert_array_equal(weighted_average(np.zeros((3, 2)), [1, 2, 3]), np.zeros(2))
    w = np.array([1.5, -2.0])
    np.testing.assert_array_equal(weighted_average([w], [1.0]), w)
    with pytest.raises(LengthMismatch):
        weighted_average(np.zeros((3, 2)), [1.0, 2.0])


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_weighted_average_is_linear(seed):
    rng = np.random.default_rng(seed)
    v, d = rng.integers(1, 6), rng.integers(1, 4)
    mu = rng.normal(size=v)
    U, W = rng.normal(size=(v, d)), rng.normal(size=(v, d))
    a, b = rng.normal(size=2)
    lhs = weighted_average(a * U + b * W, mu)
    rhs = a * weighted_average(U, mu) + b * weighted_average(W, mu)
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_validate_is_idempotent(seed):
    rng = np.random.default_rng(seed)
    n, m, v = rng.integers(1, 4, size=3)
    G, H = rng.uniform(-1, 1, (n, n)), rng.uniform(-1, 1, (m, m))
    ens = make_ensemble(rng.uniform(-1, 1, (n, n)), rng.uniform(-1, 1, (n, m)),
                        G.T @ G, H.T @ H + np.eye(m), rng.uniform(-1, 1, v) + 2.0)
    assert validate(ens) == ens


def test_policy_shapes(example_ensemble):
    const = ConstraintPolicy.constant(-1.5)
    assert const.is_constant and const.over(3).shape == (4, 1, 1)
    sched = ConstraintPolicy.schedule([-1.0, -1.5, -2.0])
    assert not sched.is_constant
    assert sched.at(2)[0, 0] == -2.0
    with pytest.raises(DimensionMismatch):
        sched.check(example_ensemble, N=5)
    with pytest.raises(DimensionMismatch):
        ConstraintPolicy.constant(np.ones((2, 1))).check(example_ensemble)


def test_initial_condition_checks(example_ensemble):
    InitialCondition.from_vectors([3, 2, 1, 4, 5]).check(example_ensemble)
    with pytest.raises(DimensionMismatch):
        InitialCondition.from_vectors([3, 2, 1]).check(example_ensemble)


def test_raw_ensemble_constructor_does_not_validate():
    raw = Ensemble(A=np.eye(1), B=np.eye(1), Q=np.eye(1), R=np.zeros((1, 1)), mu=np.ones(1))
    with pytest.raises(RNotPD):
        validate(raw)
