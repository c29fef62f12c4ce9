"""Finite-horizon Riccati recursions: centralized LQR and nested no-delay gains."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .model import TAU_PSD, PlantModel


class NumericalError(RuntimeError):
    """Raised when a synthesis step meets an ill-posed linear system."""


@dataclass(frozen=True, eq=False)
class LqrSolution:
    """Gain schedule ``H`` (N, m, n) and value matrices ``P`` (N+1, n, n)."""

    H: np.ndarray
    P: np.ndarray


@dataclass(frozen=True, eq=False)
class NestedGains:
    """No-delay nested gains.

    ``K`` (N, m, n) is the full-system LQR gain and ``J`` (N, m2, n2) the
    subsystem-2 gain.  ``P`` and ``P22`` are the matching value matrices.
    """

    K: np.ndarray
    J: np.ndarray
    P: np.ndarray
    P22: np.ndarray
    n1: int
    m1: int

    def stacked_gain(self, t: int) -> np.ndarray:
        """``[[K11, K12, 0], [K21, K22, J]]`` acting on ``[x1; x2_est; x2 - x2_est]``."""
        K, J = self.K[t], self.J[t]
        m, n = K.shape
        m2, n2 = J.shape
        out = np.zeros((m, n + n2))
        out[:, :n] = K
        out[m - m2:, n:] = J
        return out


def lqr_gains(A, B, Q, Rw, S, N: int) -> LqrSolution:
    """Backward Riccati recursion for the finite-horizon LQR problem.

    Parameters
    ----------
    A, B : array_like
        Dynamics ``x(t+1) = A x(t) + B u(t)``.
    Q, Rw, S : array_like
        Stage state weight, input weight (PD) and terminal weight.
    N : int
        Number of stages.

    Returns
    -------
    LqrSolution
        ``H[t]`` minimizes the cost-to-go with ``u(t) = -H[t] x(t)``;
        ``P[N] = S``.
    """
    A, B, Q, Rw, S = (np.asarray(M, dtype=float) for M in (A, B, Q, Rw, S))
    n, m = B.shape
    P = np.empty((N + 1, n, n))
    H = np.empty((N, m, n))
    P[N] = S
    for t in range(N - 1, -1, -1):
        Pn = P[t + 1]
        M = Rw + B.T @ Pn @ B
        M = (M + M.T) / 2
        eig = np.linalg.eigvalsh(M)
        if eig[0] <= TAU_PSD * eig[-1]:
            raise NumericalError(f"Rw + B'PB is ill-conditioned at stage {t} "
                                 f"(eigenvalues {eig[0]:.3e}..{eig[-1]:.3e})")
        H[t] = linalg.cho_solve(linalg.cho_factor(M), B.T @ Pn @ A)
        Pt = Q + A.T @ Pn @ A - A.T @ Pn @ B @ H[t]
        P[t] = (Pt + Pt.T) / 2
    return LqrSolution(H=H, P=P)


def nested_nodelay_gains(model: PlantModel) -> NestedGains:
    """Gains of the optimal nested law with instantaneous communication.

    ``K`` comes from the full-plant Riccati recursion and ``J`` from the
    recursion on ``(A22, B22)`` weighted by the block-2 diagonal blocks of
    ``Q``, ``Rw`` and ``S``.
    """
    d = model.dims
    full = lqr_gains(model.A, model.B, model.Q, model.Rw, model.S, model.N)
    sub = lqr_gains(model.A[d.n1:, d.n1:], model.B[d.n1:, d.m1:],
                    model.Q[d.n1:, d.n1:], model.Rw[d.m1:, d.m1:],
                    model.S[d.n1:, d.n1:], model.N)
    return NestedGains(K=full.H, J=sub.H, P=full.P, P22=sub.P, n1=d.n1, m1=d.m1)
