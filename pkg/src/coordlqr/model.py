"""Problem data for an ensemble of identical linear subsystems.

Each of the ``v`` subsystems evolves as ``x[k+1] = A x[k] + B u[k]`` and is
charged ``x'Qx + u'Ru`` per step. The only coupling is a linear constraint on
the weighted averages ``xbar = sum_i mu_i x_i`` and ``ubar = sum_i mu_i u_i``::

    ubar[k] = Fbar[k] @ xbar[k]
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import (
    DimensionMismatch,
    LengthMismatch,
    NotSymmetric,
    QNotPSD,
    RNotPD,
    ZeroWeights,
)


@dataclass(frozen=True)
class Tolerances:
    """Numerical tolerances shared across modules.

    ``tol_psd=None`` selects the scale-aware default
    ``1e-9 * (1 + max|eigenvalue|)`` for each matrix tested.
    """

    tol_psd: float | None = None
    tol_alg: float = 1e-9
    tol_are: float = 1e-10
    tol_kkt: float = 1e-8
    tol_rank: float = 1e-10
    tol_eig: float = 1e-10
    max_iter: int = 10000


DEFAULT_TOLERANCES = Tolerances()


def as_matrix(value, name: str = "matrix") -> np.ndarray:
    """Coerce scalars and nested sequences to a 2-D float array."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    if arr.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"{name} contains non-finite entries")
    return arr


def as_vector(value, name: str = "vector") -> np.ndarray:
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be 1-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise DimensionMismatch(f"{name} contains non-finite entries")
    return arr


def psd_tolerance(M: np.ndarray, tol_psd: float | None = None) -> float:
    if tol_psd is not None:
        return tol_psd
    scale = np.max(np.abs(np.linalg.eigvals(M))) if M.size else 0.0
    return 1e-9 * (1.0 + float(scale))


def symmetrized(M: np.ndarray, name: str, tol_psd: float | None = None) -> np.ndarray:
    """Return ``(M + M')/2``; raise if ``M`` is visibly asymmetric."""
    if M.shape[0] != M.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {M.shape}")
    asym = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if asym > psd_tolerance(M, tol_psd):
        raise NotSymmetric(f"{name} is not symmetric (max |M - M'| = {asym:.3g})")
    return 0.5 * (M + M.T)


def min_eigenvalue(M: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (M + M.T))[0])


def is_psd(M: np.ndarray, tol: float | None = None) -> bool:
    return min_eigenvalue(M) >= -psd_tolerance(M, tol)


def is_pd(M: np.ndarray, tol: float | None = None) -> bool:
    return min_eigenvalue(M) > psd_tolerance(M, tol)


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Shared subsystem matrices plus averaging weights.

    Build through :func:`make_ensemble` (or pass a raw instance to
    :func:`validate`); the constructor itself performs no checks.
    """

    A: np.ndarray
    B: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    mu: np.ndarray

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def v(self) -> int:
        return self.mu.shape[0]

    @property
    def mu_sq_sum(self) -> float:
        return float(self.mu @ self.mu)

    def __eq__(self, other):
        if not isinstance(other, Ensemble):
            return NotImplemented
        return all(
            np.array_equal(getattr(self, f), getattr(other, f))
            for f in ("A", "B", "Q", "R", "mu")
        )

    __hash__ = None


def validate(raw: Ensemble, tol_psd: float | None = None) -> Ensemble:
    """Check dimensions and Q >= 0, R > 0, sum(mu^2) > 0.

    Near-symmetric Q and R are symmetrized. Validating an already valid
    ensemble returns an equal ensemble.
    """
    A = as_matrix(raw.A, "A")
    B = as_matrix(raw.B, "B")
    Q = as_matrix(raw.Q, "Q")
    R = as_matrix(raw.R, "R")
    mu = as_vector(raw.mu, "mu")

    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatch(f"A must be square, got shape {A.shape}")
    if B.shape[0] != n:
        raise DimensionMismatch(f"B must have {n} rows, got shape {B.shape}")
    m = B.shape[1]
    if Q.shape != (n, n):
        raise DimensionMismatch(f"Q must be {n}x{n}, got shape {Q.shape}")
    if R.shape != (m, m):
        raise DimensionMismatch(f"R must be {m}x{m}, got shape {R.shape}")
    if mu.shape[0] < 1:
        raise DimensionMismatch("mu must hold at least one weight")

    Q = symmetrized(Q, "Q", tol_psd)
    R = symmetrized(R, "R", tol_psd)
    if not is_psd(Q, tol_psd):
        raise QNotPSD(f"QNotPSD: smallest eigenvalue of Q is {min_eigenvalue(Q):.3g}")
    if not is_pd(R, tol_psd):
        raise RNotPD(f"RNotPD: smallest eigenvalue of R is {min_eigenvalue(R):.3g}")
    if not float(mu @ mu) > 0.0:
        raise ZeroWeights("ZeroWeights: sum of squared weights must be positive")

    return Ensemble(A=A, B=B, Q=Q, R=R, mu=mu)


def make_ensemble(A, B, Q, R, mu, tol_psd: float | None = None) -> Ensemble:
    return validate(Ensemble(A=A, B=B, Q=Q, R=R, mu=mu), tol_psd)


def weighted_average(vectors, mu) -> np.ndarray:
    """Return ``sum_i mu[i] * vectors[i]``.

    ``vectors`` is anything shaped ``(v, d)``; a trailing axis of extra
    dimensions is fine as long as the leading one matches ``len(mu)``.
    """
    X = np.asarray(vectors, dtype=float)
    w = np.asarray(mu, dtype=float).reshape(-1)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.shape[0] != w.shape[0]:
        raise LengthMismatch(f"got {X.shape[0]} vectors for {w.shape[0]} weights")
    return np.tensordot(w, X, axes=(0, 0))


@dataclass(frozen=True, eq=False)
class ConstraintPolicy:
    """Average-feedback gains ``Fbar``.

    ``gains`` is either a single ``(m, n)`` matrix (time-invariant, used for
    the infinite horizon) or a ``(N+1, m, n)`` stack with one gain per step.
    """

    gains: np.ndarray

    def __post_init__(self):
        gains = np.asarray(self.gains, dtype=float)
        if gains.ndim not in (2, 3):
            raise DimensionMismatch(f"Fbar must be a matrix or a stack of matrices, got {gains.ndim}-D")
        object.__setattr__(self, "gains", gains)

    @classmethod
    def constant(cls, Fbar) -> "ConstraintPolicy":
        return cls(as_matrix(Fbar, "Fbar"))

    @classmethod
    def schedule(cls, Fbars: Sequence) -> "ConstraintPolicy":
        stack = np.stack([as_matrix(F, f"Fbar[{k}]") for k, F in enumerate(Fbars)])
        return cls(stack)

    @property
    def is_constant(self) -> bool:
        return self.gains.ndim == 2

    @property
    def shape(self) -> tuple[int, int]:
        return self.gains.shape[-2:]

    def at(self, k: int) -> np.ndarray:
        if self.is_constant:
            return self.gains
        if not 0 <= k < self.gains.shape[0]:
            raise DimensionMismatch(f"no constraint gain for step {k}")
        return self.gains[k]

    def over(self, N: int) -> np.ndarray:
        """Gains for steps ``0..N`` as an ``(N+1, m, n)`` stack."""
        if self.is_constant:
            return np.broadcast_to(self.gains, (N + 1,) + self.gains.shape).copy()
        if self.gains.shape[0] != N + 1:
            raise DimensionMismatch(
                f"policy has {self.gains.shape[0]} gains, horizon {N} needs {N + 1}"
            )
        return self.gains.copy()

    def check(self, ens: Ensemble, N: int | None = None) -> "ConstraintPolicy":
        if self.shape != (ens.m, ens.n):
            raise DimensionMismatch(
                f"Fbar must be {ens.m}x{ens.n}, got {self.shape[0]}x{self.shape[1]}"
            )
        if N is not None:
            self.over(N)
        return self


@dataclass(frozen=True, eq=False)
class InitialCondition:
    """Initial states, one row per subsystem: shape ``(v, n)``."""

    x0: np.ndarray = field()

    @classmethod
    def from_vectors(cls, vectors) -> "InitialCondition":
        X = np.asarray(vectors, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        return cls(X)

    def check(self, ens: Ensemble) -> "InitialCondition":
        if self.x0.shape != (ens.v, ens.n):
            raise DimensionMismatch(
                f"initial condition must be {ens.v} vectors of length {ens.n}, "
                f"got shape {self.x0.shape}"
            )
        return self

    def average(self, mu) -> np.ndarray:
        return weighted_average(self.x0, mu)

