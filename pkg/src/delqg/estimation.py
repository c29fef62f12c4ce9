"""Estimator schedules and the runtime filter recursions of both players.

Conventions
-----------
Runtime quantities are batched row vectors: a state batch has shape
``(batch, n)`` and a linear map ``M`` is applied as ``x @ M.T``.

For the (1,0) family the common-history estimate ``xhat`` is a one-step
Kalman predictor and the innovation is ``y - C xhat``.

For the (1,inf) family player 1 runs ``xhat = E[x | H1]`` and player 2 runs
``xhathat = E[x | H1, H2]``.  The innovation acted on by the structured gain
is ``iota = (phi, psi)`` with ``phi = y1 - C11 xhat1`` (player 1's fresh
information) and ``psi = y2 - C21 xhat1 - C22 xhathat2`` (player 2's).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import TAU_PINV, TAU_PSD, Mode, Pattern, PlantModel


class EstimationError(RuntimeError):
    pass


def pinv(M: np.ndarray) -> np.ndarray:
    return np.linalg.pinv(M, rtol=TAU_PINV, hermitian=True)


def _sym(M):
    return (M + M.T) / 2


def _check_psd(M, what, t):
    eig = np.linalg.eigvalsh(_sym(M))
    top = max(abs(eig[0]), abs(eig[-1])) if eig.size else 0.0
    if eig.size and eig[0] < -TAU_PSD * max(top, 1.0):
        raise EstimationError(f"{what} is indefinite at stage {t}: eigenvalues "
                              f"{eig[0]:.3e}..{eig[-1]:.3e}, condition {top / max(abs(eig[0]), 1e-300):.3e}")


def one_inf_family(pattern: Pattern) -> bool:
    return pattern in (Pattern.ONE_INF, Pattern.NO_DELAY)


@dataclass(frozen=True, eq=False)
class EstimatorSchedule:
    """Gains and covariances of the filters, one entry per stage.

    Attributes
    ----------
    Tbar : (N+1, n, n)
        Covariance of the error ``x - xbar`` the cost decomposes around
        (``xbar = xhat`` for (1,0), ``[xhat1; xhathat2]`` for (1,inf)).
    T : (N+1, n, n) or (N+1, n, n1)
        (1,0): equal to ``Tbar``.  (1,inf): cross covariance
        ``E[(x - xhat)(x1 - xhat1)']``.
    Theta : (N, q, q)
        Covariance of the innovation vector the structured gain acts on.
    Rg : (N, n, q1)
        Player-1 (or common) estimator gain.
    Rbar : (N, n, q)
        Player-2 estimator gain; identical to ``Rg`` for (1,0).
    psi_given_phi : (N, q2, q1) or None
        Regression ``E[psi | phi] = psi_given_phi @ phi`` ((1,inf) only).
    """

    pattern: Pattern
    mode: Mode
    C: np.ndarray
    W: np.ndarray
    q1: int
    Tbar: np.ndarray
    T: np.ndarray
    Theta: np.ndarray
    Rg: np.ndarray
    Rbar: np.ndarray
    psi_given_phi: np.ndarray | None = None

    @property
    def N(self) -> int:
        return self.Theta.shape[0]

    @property
    def q(self) -> int:
        return self.Theta.shape[1]

    @property
    def T1(self) -> np.ndarray:
        """Player-1 innovation covariance block."""
        return self.Theta[:, :self.q1, :self.q1]


def _kalman(A, C, W, V, cov0, N):
    """Predictor covariances ``T``, innovation covariances and ``T C' Theta^+``."""
    n, p = A.shape[0], C.shape[0]
    T = np.empty((N + 1, n, n))
    Theta = np.empty((N, p, p))
    Gamma = np.empty((N, n, p))
    T[0] = cov0
    for t in range(N):
        Th = _sym(C @ T[t] @ C.T + W)
        _check_psd(Th, "innovation covariance", t)
        Theta[t] = Th
        Gamma[t] = T[t] @ C.T @ pinv(Th)
        Tn = A @ (T[t] - Gamma[t] @ C @ T[t]) @ A.T + V
        T[t + 1] = _sym(Tn)
    return T, Theta, Gamma


def state_feedback_covs(model: PlantModel, pattern: Pattern) -> EstimatorSchedule:
    """Closed-form schedules under state feedback.

    One-step prediction errors are the previous stage's process noise, so
    every covariance after stage 0 is built from ``V``.
    """
    A, V, N = np.asarray(model.A), np.asarray(model.V), model.N
    n, n1 = model.n, model.dims.n1
    Tbar = np.empty((N + 1, n, n))
    Tbar[0] = model.cov0
    Tbar[1:] = V
    Theta = Tbar[:N].copy()
    C, W = np.eye(n), np.zeros((n, n))
    if not one_inf_family(pattern):
        Rg = np.broadcast_to(A, (N, n, n)).copy()
        return EstimatorSchedule(pattern, Mode.STATE, C, W, n1, Tbar, Tbar.copy(), Theta,
                                 Rg, Rg.copy())
    T = Tbar[:, :, :n1].copy()
    Rg = np.empty((N, n, n1))
    psi = np.empty((N, n - n1, n1))
    for t in range(N):
        T1p = pinv(Tbar[t][:n1, :n1])
        Rg[t] = A @ T[t] @ T1p
        psi[t] = Tbar[t][n1:, :n1] @ T1p
    Rbar = np.broadcast_to(A, (N, n, n)).copy()
    return EstimatorSchedule(pattern, Mode.STATE, C, W, n1, Tbar, T, Theta, Rg, Rbar, psi)


def output_feedback_kalman(model: PlantModel) -> EstimatorSchedule:
    """Kalman predictor for the (1,0) output-feedback problem."""
    C, W, p1 = model.observation(Mode.OUTPUT)
    A = np.asarray(model.A)
    T, Theta, Gamma = _kalman(A, C, W, np.asarray(model.V), np.asarray(model.cov0), model.N)
    Rg = np.einsum("ij,tjk->tik", A, Gamma)
    return EstimatorSchedule(Pattern.ONE_ZERO, Mode.OUTPUT, C, W, p1, T, T.copy(), Theta,
                             Rg, Rg.copy())


def partial_output_gains(model: PlantModel, mode: Mode = Mode.PARTIAL_OUTPUT) -> EstimatorSchedule:
    """Schedules for the (1,inf) output modes.

    Player 2's error covariance follows the Kalman recursion for the full
    observation ``y = C x + w``; with ``y1 = x1`` the innovation covariance
    is singular and is inverted by pseudoinverse.  Player 1's gain regresses
    the state error on ``phi`` through the cross covariance ``T``.
    """
    C, W, p1 = model.observation(mode)
    A = np.asarray(model.A)
    n1 = model.dims.n1
    Tbar, Theta, Gamma = _kalman(A, C, W, np.asarray(model.V), np.asarray(model.cov0), model.N)
    N = model.N
    C11 = C[:p1, :n1]
    T = Tbar[:, :, :n1].copy()
    Rg = np.empty((N, model.n, p1))
    psi = np.empty((N, C.shape[0] - p1, p1))
    for t in range(N):
        Th11p = pinv(Theta[t][:p1, :p1])
        Rg[t] = A @ T[t] @ C11.T @ Th11p
        psi[t] = Theta[t][p1:, :p1] @ Th11p
    Rbar = np.einsum("ij,tjk->tik", A, Gamma)
    return EstimatorSchedule(Pattern.ONE_INF, mode, C, W, p1, Tbar, T, Theta, Rg, Rbar, psi)


def estimator_schedule(model: PlantModel, pattern: Pattern, mode: Mode) -> EstimatorSchedule:
    if mode is Mode.STATE:
        return state_feedback_covs(model, pattern)
    if mode is Mode.OUTPUT:
        sched = output_feedback_kalman(model)
        if pattern is Pattern.CENTRALIZED:
            return _with_pattern(sched, pattern)
        return sched
    return partial_output_gains(model, mode)


def _with_pattern(s: EstimatorSchedule, pattern: Pattern) -> EstimatorSchedule:
    return EstimatorSchedule(pattern, s.mode, s.C, s.W, s.q1, s.Tbar, s.T, s.Theta, s.Rg,
                             s.Rbar, s.psi_given_phi)


# ---------------------------------------------------------------------------
# runtime recursions

@dataclass(frozen=True, eq=False)
class FilterState:
    """Player estimates for a batch of rollouts at stage ``t``."""

    xhat: np.ndarray
    xhathat: np.ndarray
    t: int = 0

    @classmethod
    def initial(cls, model: PlantModel, batch: int) -> "FilterState":
        mean = np.broadcast_to(np.asarray(model.mean0), (batch, model.n))
        return cls(mean.copy(), mean.copy(), 0)


def innovations(model: PlantModel, est: EstimatorSchedule, y: np.ndarray,
                state: FilterState) -> np.ndarray:
    """Innovation vector the structured gain acts on, shape ``(batch, q)``.

    (1,0): ``y - C xhat``.  (1,inf): ``[y1 - C11 xhat1, y2 - C21 xhat1 - C22 xhathat2]``.
    """
    if not one_inf_family(est.pattern):
        return y - state.xhat @ est.C.T
    return y - _mixed(state, model.dims.n1) @ est.C.T


def _mixed(state: FilterState, n1: int) -> np.ndarray:
    """``[xhat1; xhathat2]``: the estimate player 2 conditions on."""
    out = state.xhathat.copy()
    out[:, :n1] = state.xhat[:, :n1]
    return out


def step_filters(state: FilterState, model: PlantModel, est: EstimatorSchedule,
                 y: np.ndarray, u: np.ndarray, u2hat: np.ndarray | None = None,
                 enforce: bool = True) -> FilterState:
    """Advance both players' estimates by one stage.

    Parameters
    ----------
    y, u : ndarray
        Observation and applied input at stage ``state.t``, shape ``(batch, .)``.
    u2hat : ndarray, optional
        Player 1's conditional mean of ``u2`` given its current information;
        required for the (1,inf) family.
    enforce : bool
        Overwrite the block-1 part of player 2's estimate with player 1's.
        Turning it off runs player 2's filter on its own, which is how the
        block-1 agreement of the two estimates is checked.
    """
    t = state.t
    if t >= est.N:
        raise IndexError(f"stage {t} outside horizon {est.N}")
    A, B = np.asarray(model.A), np.asarray(model.B)
    if not one_inf_family(est.pattern):
        xhat = state.xhat @ A.T + u @ B.T + (y - state.xhat @ est.C.T) @ est.Rg[t].T
        return FilterState(xhat, xhat, t + 1)

    d = model.dims
    if u2hat is None:
        raise ValueError("u2hat is required for the (1,inf) filters")
    q1 = est.q1
    C11 = est.C[:q1, :d.n1]
    phi = y[:, :q1] - state.xhat[:, :d.n1] @ C11.T
    u_p1 = np.concatenate([u[:, :d.m1], u2hat], axis=1)
    xhat = state.xhat @ A.T + u_p1 @ B.T + phi @ est.Rg[t].T

    base = _mixed(state, d.n1) if enforce else state.xhathat
    phibar = y - base @ est.C.T
    xhathat = base @ A.T + u @ B.T + phibar @ est.Rbar[t].T
    if enforce:
        xhathat[:, :d.n1] = xhat[:, :d.n1]
    return FilterState(xhat, xhathat, t + 1)
