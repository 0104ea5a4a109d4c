"""Infinite-horizon synthesis and the stabilization tests.

The steady pair ``(P, Pbar)`` solves the coupled algebraic equations ::

    P    = Q + A'PA - A'PB (R + B'PB)^{-1} B'PA
    Pbar = (A+BF)' Pbar (A+BF) + (F - K)'(R + B'PB)(F - K)

``P`` is obtained by value iteration from zero (the limit of the
finite-horizon ``P[0]`` as the horizon grows). Given ``P``, the second
equation is a discrete Lyapunov equation in ``Pbar`` and is solved directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ClosedLoopUnstable, NoConvergence, NotPositiveDefinite, QNotPSD
from .model import (
    DEFAULT_TOLERANCES,
    ConstraintPolicy,
    Ensemble,
    Tolerances,
    as_matrix,
    is_pd,
    psd_tolerance,
)
from .riccati import feedback_gain, pbar_step, riccati_step

log = logging.getLogger(__name__)

STABILIZABLE = "stabilizable"
NOT_STABILIZABLE = "not_stabilizable"


def _rel_change(new: np.ndarray, old: np.ndarray) -> float:
    # max-abs rather than Frobenius: squaring overflows long before the entries do
    return float(np.max(np.abs(new - old)) / (1.0 + np.max(np.abs(new))))


def spectral_radius(M) -> float:
    M = as_matrix(M, "M")
    if M.size == 0:
        return 0.0
    return float(np.max(np.abs(np.linalg.eigvals(M))))


def sqrt_factor(Q, tol_psd: float | None = None) -> np.ndarray:
    """Symmetric square root ``C`` with ``C'C = Q``."""
    Q = as_matrix(Q, "Q")
    Qs = 0.5 * (Q + Q.T)
    w, V = np.linalg.eigh(Qs)
    if w.size and w[0] < -psd_tolerance(Qs, tol_psd):
        raise QNotPSD(f"QNotPSD: smallest eigenvalue of Q is {w[0]:.3g}")
    w = np.clip(w, 0.0, None)
    return (V * np.sqrt(w)) @ V.T


def observability(A, C, tol_rank: float = DEFAULT_TOLERANCES.tol_rank) -> bool:
    """Rank test on ``[C; CA; ...; CA^(n-1)]``."""
    A = as_matrix(A, "A")
    C = as_matrix(C, "C")
    n = A.shape[0]
    blocks = [C]
    for _ in range(n - 1):
        blocks.append(blocks[-1] @ A)
    O = np.vstack(blocks)
    s = np.linalg.svd(O, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return False
    rank = int(np.sum(s > tol_rank * s[0]))
    return rank == n


def is_observable(ens: Ensemble, tol: Tolerances = DEFAULT_TOLERANCES) -> bool:
    return observability(ens.A, sqrt_factor(ens.Q, tol.tol_psd), tol.tol_rank)


def _iterate_are(ens: Ensemble, tol_are: float, max_iter: int, P0=None):
    P = np.zeros((ens.n, ens.n)) if P0 is None else as_matrix(P0, "P0")
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, max_iter + 1):
            P_new, _ = riccati_step(P, ens)
            if not np.all(np.isfinite(P_new)):
                raise NoConvergence(f"NoConvergence: Riccati iteration diverged after {it} steps")
            change = _rel_change(P_new, P)
            P = P_new
            if change < tol_are:
                return P, it
    raise NoConvergence(
        f"NoConvergence: Riccati iteration did not settle in {max_iter} steps "
        f"(last relative change {change:.3g})"
    )


def solve_are(
    ens: Ensemble,
    tol_are: float = DEFAULT_TOLERANCES.tol_are,
    max_iter: int = DEFAULT_TOLERANCES.max_iter,
    P0=None,
    check_pd: bool = True,
) -> np.ndarray:
    """Steady Riccati solution by value iteration.

    Raises :class:`NoConvergence` if the iteration diverges or stalls, which
    happens when ``(A, B)`` cannot be stabilized. When ``(A, Q^{1/2})`` is
    observable the limit is also checked to be positive definite.
    """
    P, _ = _iterate_are(ens, tol_are, max_iter, P0)
    if check_pd and is_observable(ens) and not is_pd(P):
        raise NotPositiveDefinite("NotPositiveDefinite: converged P is singular despite observability")
    return P


def lyapunov_residual(Pbar: np.ndarray, M: np.ndarray, W: np.ndarray) -> float:
    res = Pbar - M.T @ Pbar @ M - W
    return float(np.linalg.norm(res) / (1.0 + np.linalg.norm(Pbar)))


def _vech_maps(n: int):
    """Duplication ``D`` (vec = D vech) and elimination ``L`` (vech = L vec)."""
    pairs = [(i, j) for j in range(n) for i in range(j, n)]
    D = np.zeros((n * n, len(pairs)))
    L = np.zeros((len(pairs), n * n))
    for c, (i, j) in enumerate(pairs):
        D[i + j * n, c] = 1.0
        D[j + i * n, c] = 1.0
        L[c, i + j * n] = 1.0
    return D, L


def solve_discrete_lyapunov_sym(M: np.ndarray, W: np.ndarray) -> np.ndarray:
    """Solve ``X = M'XM + W`` for symmetric ``X`` over its n(n+1)/2 free entries."""
    n = M.shape[0]
    D, L = _vech_maps(n)
    # column-major vec: vec(M'XM) = kron(M', M') vec(X)
    T = np.eye(n * n) - np.kron(M.T, M.T)
    h = np.linalg.solve(L @ T @ D, L @ W.reshape(-1, order="F"))
    X = (D @ h).reshape(n, n, order="F")
    return 0.5 * (X + X.T)


def pbar_forcing(P: np.ndarray, Fbar: np.ndarray, ens: Ensemble) -> np.ndarray:
    """Constant term of the steady coordination equation (at ``Pbar = 0``)."""
    return pbar_step(np.zeros_like(P), P, Fbar, ens)


def solve_pbar_iterative(
    P: np.ndarray,
    Fbar,
    ens: Ensemble,
    tol_are: float = DEFAULT_TOLERANCES.tol_are,
    max_iter: int = DEFAULT_TOLERANCES.max_iter,
) -> np.ndarray:
    """Fixed-point iteration of the coordination equation from zero."""
    Fbar = as_matrix(Fbar, "Fbar")
    Pbar = np.zeros_like(P)
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, max_iter + 1):
            new = pbar_step(Pbar, P, Fbar, ens)
            if not np.all(np.isfinite(new)):
                raise NoConvergence(f"NoConvergence: Pbar iteration diverged after {it} steps")
            change = _rel_change(new, Pbar)
            Pbar = new
            if change < tol_are:
                return Pbar
    raise NoConvergence(f"NoConvergence: Pbar iteration did not settle in {max_iter} steps")


def solve_pbar(
    P: np.ndarray,
    Fbar,
    ens: Ensemble,
    tol_are: float = DEFAULT_TOLERANCES.tol_are,
    tol_eig: float = DEFAULT_TOLERANCES.tol_eig,
) -> np.ndarray:
    """Steady coordination matrix for a given Riccati solution ``P``.

    Requires ``A + B Fbar`` to be Schur stable; the equation then has a
    unique solution, found by a linear solve with fixed-point iteration as
    a fallback when the solve's residual is poor.
    """
    Fbar = as_matrix(Fbar, "Fbar")
    M = ens.A + ens.B @ Fbar
    rho = spectral_radius(M)
    if rho >= 1.0 - tol_eig:
        raise ClosedLoopUnstable(f"ClosedLoopUnstable: spectral radius of A + B Fbar is {rho:.6g}")
    W = pbar_forcing(P, Fbar, ens)
    try:
        Pbar = solve_discrete_lyapunov_sym(M, W)
    except np.linalg.LinAlgError:
        Pbar = None
    if Pbar is None or lyapunov_residual(Pbar, M, W) >= tol_are:
        log.debug("linear Pbar solve inaccurate; falling back to iteration")
        Pbar = solve_pbar_iterative(P, Fbar, ens, tol_are=tol_are * 1e-2)
    return Pbar


def gains(P: np.ndarray, Fbar, ens: Ensemble) -> tuple[np.ndarray, np.ndarray]:
    """Steady gains ``K = -(R + B'PB)^{-1} B'PA`` and ``Kbar = Fbar - K``."""
    K = feedback_gain(P, ens)
    return K, as_matrix(Fbar, "Fbar") - K


def are_residual(P: np.ndarray, ens: Ensemble) -> float:
    P_next, _ = riccati_step(P, ens)
    return _rel_change(P_next, P)


def solve_coupled_are(
    ens: Ensemble,
    Fbar,
    tol_are: float = DEFAULT_TOLERANCES.tol_are,
    max_iter: int = DEFAULT_TOLERANCES.max_iter,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Joint value iteration of ``(P, Pbar)`` from zero.

    This is the finite-horizon recursion run until ``P[0]`` and ``Pbar[0]``
    stop moving; it needs no spectral information and is therefore used as
    an independent route to the stabilization verdict.
    """
    Fbar = as_matrix(Fbar, "Fbar")
    P = np.zeros((ens.n, ens.n))
    Pbar = np.zeros_like(P)
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(1, max_iter + 1):
            P_new, _ = riccati_step(P, ens)
            Pbar_new = pbar_step(Pbar, P, Fbar, ens)
            if not (np.all(np.isfinite(P_new)) and np.all(np.isfinite(Pbar_new))):
                raise NoConvergence(f"NoConvergence: coupled iteration diverged after {it} steps")
            change = max(_rel_change(P_new, P), _rel_change(Pbar_new, Pbar))
            P, Pbar = P_new, Pbar_new
            if change < tol_are:
                return P, Pbar, it
    raise NoConvergence(f"NoConvergence: coupled iteration did not settle in {max_iter} steps")


@dataclass(frozen=True, eq=False)
class SteadySolution:
    P: np.ndarray
    Pbar: np.ndarray
    K: np.ndarray
    Kbar: np.ndarray
    Fbar: np.ndarray
    iterations: int
    residuals: dict = field(default_factory=dict)


def synthesize_steady(ens: Ensemble, Fbar, tol: Tolerances = DEFAULT_TOLERANCES) -> SteadySolution:
    """Steady gains for the constant constraint gain ``Fbar``."""
    Fbar = ConstraintPolicy.constant(Fbar).check(ens).gains
    P, iterations = _iterate_are(ens, tol.tol_are, tol.max_iter)
    if is_observable(ens, tol) and not is_pd(P):
        raise NotPositiveDefinite("NotPositiveDefinite: converged P is singular despite observability")
    Pbar = solve_pbar(P, Fbar, ens, tol.tol_are, tol.tol_eig)
    K, Kbar = gains(P, Fbar, ens)
    M = ens.A + ens.B @ Fbar
    residuals = {
        "are": are_residual(P, ens),
        "pbar": lyapunov_residual(Pbar, M, pbar_forcing(P, Fbar, ens)),
    }
    return SteadySolution(P=P, Pbar=Pbar, K=K, Kbar=Kbar, Fbar=Fbar,
                          iterations=iterations, residuals=residuals)


@dataclass(frozen=True, eq=False)
class StabilityReport:
    """Outcome of the three equivalent stabilization tests.

    ``verdict`` comes from the spectral radius of ``A + B Fbar``; the
    Riccati-based fields cross-check it. Any mismatch between routes is
    listed in ``disagreements`` rather than silently resolved.
    """

    spectral_radius_closed_loop: float
    observable: bool
    are_solved: bool
    p_positive_definite: bool
    p_plus_pbar_positive_definite: bool
    verdict: str
    P: np.ndarray | None = None
    Pbar: np.ndarray | None = None
    are_iterations: int | None = None
    disagreements: tuple[str, ...] = ()

    @property
    def stabilizable(self) -> bool:
        return self.verdict == STABILIZABLE

    @property
    def consistent(self) -> bool:
        return not self.disagreements


def stability_report(ens: Ensemble, Fbar, tol: Tolerances = DEFAULT_TOLERANCES) -> StabilityReport:
    Fbar = ConstraintPolicy.constant(Fbar).check(ens).gains
    rho = spectral_radius(ens.A + ens.B @ Fbar)
    observable = is_observable(ens, tol)
    verdict = STABILIZABLE if rho < 1.0 - tol.tol_eig else NOT_STABILIZABLE

    P = Pbar = None
    iterations = None
    try:
        P, Pbar, iterations = solve_coupled_are(ens, Fbar, tol.tol_are, tol.max_iter)
        are_solved = True
    except NoConvergence:
        are_solved = False
        try:
            P, iterations = _iterate_are(ens, tol.tol_are, tol.max_iter)
        except NoConvergence:
            pass
    p_pd = P is not None and is_pd(P, tol.tol_psd)
    ppb_pd = are_solved and is_pd(P + Pbar, tol.tol_psd)

    disagreements = []
    if observable:
        by_are = are_solved and p_pd and ppb_pd
        if by_are != (verdict == STABILIZABLE):
            disagreements.append(
                f"spectral test says {verdict} (rho={rho:.6g}) but Riccati test says "
                f"{STABILIZABLE if by_are else NOT_STABILIZABLE}"
            )
    return StabilityReport(
        spectral_radius_closed_loop=rho,
        observable=observable,
        are_solved=are_solved,
        p_positive_definite=p_pd,
        p_plus_pbar_positive_definite=ppb_pd,
        verdict=verdict,
        P=P,
        Pbar=Pbar,
        are_iterations=iterations,
        disagreements=tuple(disagreements),
    )
