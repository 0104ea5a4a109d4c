"""Instance builders shared by the test modules."""

import numpy as np

from coordlqr import ConstraintPolicy, InitialCondition, make_ensemble


def random_ensemble(rng, n=None, m=None, v=None):
    n = n or int(rng.integers(1, 4))
    m = m or int(rng.integers(1, 4))
    v = v or int(rng.integers(1, 5))
    G, H = rng.uniform(-1, 1, (n, n)), rng.uniform(-1, 1, (m, m))
    mu = rng.uniform(-1, 1, v)
    mu[0] += np.sign(mu[0]) * 0.1
    return make_ensemble(rng.uniform(-1, 1, (n, n)), rng.uniform(-1, 1, (n, m)),
                         G.T @ G, H.T @ H + np.eye(m), mu)


def random_problem(rng, N=None):
    ens = random_ensemble(rng)
    N = int(rng.integers(0, 9)) if N is None else N
    policy = ConstraintPolicy(rng.uniform(-1, 1, (N + 1, ens.m, ens.n)))
    ic = InitialCondition(rng.uniform(-1, 1, (ens.v, ens.n)))
    return ens, policy, N, ic


def min_eig(M):
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])
