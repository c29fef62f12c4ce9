"""Executable closed-loop laws and end-to-end synthesis.

A policy computes each player's input from exactly the data that player
may use.  :meth:`ControllerPolicy.controls` slices the available signals
and hands each player function only its permitted part, so the
information pattern is enforced by construction rather than by
convention.

Signals are batched row vectors (see :mod:`delqg.estimation`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimation import (EstimatorSchedule, FilterState, estimator_schedule,
                         output_feedback_kalman, state_feedback_covs)
from .gainopt import FStructure, GainOptResult, solve_F
from .model import Mode, Pattern, PlantModel
from .riccati import LqrSolution, NestedGains, lqr_gains, nested_nodelay_gains


@dataclass(frozen=True, eq=False)
class ControllerPolicy:
    """Base class: a linear law driven by the filters of ``est``."""

    model: PlantModel
    pattern: Pattern
    mode: Mode
    est: EstimatorSchedule

    @property
    def N(self) -> int:
        return self.model.N

    def controls(self, t: int, state: FilterState, y: np.ndarray):
        """Inputs ``u`` (batch, m) and player 1's estimate of ``u2`` (or None)."""
        raise NotImplementedError

    def _check_stage(self, t):
        if not 0 <= t < self.N:
            raise IndexError(f"stage {t} outside horizon {self.N}")


@dataclass(frozen=True, eq=False)
class CommonHistoryPolicy(ControllerPolicy):
    """``u = F (y - C xhat) - H xhat`` on the common-history predictor ``xhat``.

    Used for the (1,0) pattern, where ``F`` has a zero lower-left block so
    player 2 never reads ``y1(t)``, and for the centralized baseline.
    """

    H: np.ndarray = None   # (N, m, n)
    F: np.ndarray = None   # (N, m, q)

    def player1(self, t, xhat, y):
        m1 = self.model.dims.m1
        iota = y - xhat @ self.est.C.T
        return iota @ self.F[t, :m1].T - xhat @ self.H[t, :m1].T

    def player2(self, t, xhat, y_seen):
        """``y_seen`` is ``y2(t)`` under (1,0) and all of ``y(t)`` when centralized."""
        m1, q1 = self.model.dims.m1, self.est.q1
        if self.pattern is Pattern.CENTRALIZED:
            C, F = self.est.C, self.F[t, m1:]
        else:
            C, F = self.est.C[q1:], self.F[t, m1:, q1:]
        return (y_seen - xhat @ C.T) @ F.T - xhat @ self.H[t, m1:].T

    def controls(self, t, state, y):
        self._check_stage(t)
        q1 = self.est.q1
        u1 = self.player1(t, state.xhat, y)
        y2 = y if self.pattern is Pattern.CENTRALIZED else y[:, q1:]
        u2 = self.player2(t, state.xhat, y2)
        return np.concatenate([u1, u2], axis=1), None


@dataclass(frozen=True, eq=False)
class NestedPolicy(ControllerPolicy):
    """The (1,inf) law

        u1 = F11 phi - K1 [xhat1; xhat2]
        u2 = F22 psi - K2 [xhat1; xhat2] - J (xhathat2 - xhat2)

    Player 2 can run player 1's filter because it receives ``y1`` with a
    one-step delay.  Player 1 also returns its conditional mean of ``u2``,
    ``-K2 xhat + F22 E[psi | phi]``, which drives its own filter.
    """

    gains: NestedGains = None
    F: np.ndarray = None   # (N, m, q), block diagonal

    def player1(self, t, xhat, y1):
        d, q1 = self.model.dims, self.est.q1
        K, F = self.gains.K[t], self.F[t]
        phi = y1 - xhat[:, :d.n1] @ self.est.C[:q1, :d.n1].T
        u1 = phi @ F[:d.m1, :q1].T - xhat @ K[:d.m1].T
        gain = F[d.m1:, q1:] @ self.est.psi_given_phi[t]
        u2hat = phi @ gain.T - xhat @ K[d.m1:].T
        return u1, u2hat

    def player2(self, t, xhat, xhathat, y2):
        d, q1 = self.model.dims, self.est.q1
        K, J, F = self.gains.K[t], self.gains.J[t], self.F[t]
        C2 = self.est.C[q1:]
        psi = y2 - xhat[:, :d.n1] @ C2[:, :d.n1].T - xhathat[:, d.n1:] @ C2[:, d.n1:].T
        xi = xhathat[:, d.n1:] - xhat[:, d.n1:]
        return psi @ F[d.m1:, q1:].T - xhat @ K[d.m1:].T - xi @ J.T

    def controls(self, t, state, y):
        self._check_stage(t)
        q1 = self.est.q1
        u1, u2hat = self.player1(t, state.xhat, y[:, :q1])
        u2 = self.player2(t, state.xhat, state.xhathat, y[:, q1:])
        return np.concatenate([u1, u2], axis=1), u2hat


@dataclass(frozen=True, eq=False)
class NoDelayPolicy(ControllerPolicy):
    """Nested law with instantaneous communication from player 1 to player 2.

    With ``xt2 = E[x2 | x1 history]`` and ``X = [x1; xt2]``::

        u1 = -K1 X
        u2 = -K2 X - J (x2 - xt2)

    ``xt2 = xhat2 + L (x1 - xhat1)`` corrects player 1's one-step
    prediction by the regression of the block-2 error on the fresh block-1
    innovation.
    """

    gains: NestedGains = None

    def _X(self, t, xhat, x1):
        n1 = self.model.dims.n1
        phi = x1 - xhat[:, :n1]
        xt2 = xhat[:, n1:] + phi @ self.est.psi_given_phi[t].T
        return np.concatenate([x1, xt2], axis=1)

    def player1(self, t, xhat, x1):
        m1 = self.model.dims.m1
        X = self._X(t, xhat, x1)
        K = self.gains.K[t]
        return -X @ K[:m1].T, -X @ K[m1:].T

    def player2(self, t, xhat, x):
        d = self.model.dims
        X = self._X(t, xhat, x[:, :d.n1])
        xi = x[:, d.n1:] - X[:, d.n1:]
        return -X @ self.gains.K[t, d.m1:].T - xi @ self.gains.J[t].T

    def controls(self, t, state, y):
        self._check_stage(t)
        n1 = self.model.dims.n1
        u1, u2hat = self.player1(t, state.xhat, y[:, :n1])
        u2 = self.player2(t, state.xhat, y)
        return np.concatenate([u1, u2], axis=1), u2hat


def zero_policy(model: PlantModel, mode: Mode = Mode.STATE) -> CommonHistoryPolicy:
    """``u = 0``, with the common-history predictor running alongside."""
    if mode is Mode.STATE:
        est = state_feedback_covs(model, Pattern.ONE_ZERO)
    else:
        est = output_feedback_kalman(model)
    return CommonHistoryPolicy(model, Pattern.ONE_ZERO, mode, est,
                               H=np.zeros((model.N, model.m, model.n)),
                               F=np.zeros((model.N, model.m, est.q)))


def assemble_policy(model: PlantModel, pattern: Pattern, mode: Mode, gains, F: np.ndarray | None,
                    est: EstimatorSchedule) -> ControllerPolicy:
    """Build the executable law from synthesized schedules.

    ``gains`` is an :class:`LqrSolution` for the (1,0) and centralized laws
    and a :class:`NestedGains` for the nested ones.
    """
    N = model.N
    if pattern is Pattern.NO_DELAY:
        _check_len(gains.K, N, "K")
        return NoDelayPolicy(model, pattern, mode, est, gains=gains)
    _check_len(F, N, "F")
    _check_len(est.Theta, N, "estimator schedule")
    if pattern is Pattern.ONE_INF:
        _check_len(gains.K, N, "K")
        return NestedPolicy(model, pattern, mode, est, gains=gains, F=np.asarray(F))
    _check_len(gains.H, N, "H")
    return CommonHistoryPolicy(model, pattern, mode, est, H=gains.H, F=np.asarray(F))


def _check_len(arr, N, name):
    if arr is None or len(arr) != N:
        raise ValueError(f"{name} schedule has {0 if arr is None else len(arr)} stages, "
                         f"expected {N}")


# ---------------------------------------------------------------------------
# synthesis

@dataclass(frozen=True, eq=False)
class Synthesis:
    """Optimal law for one pattern and its expected cost ``cost``.

    ``certified`` is False for constrained output feedback.  There the
    two players' block-1 estimates need not coincide, so the law is only a
    structured heuristic and ``cost`` is its exact propagated cost rather
    than the trace-objective value.
    """

    model: PlantModel
    pattern: Pattern
    mode: Mode
    est: EstimatorSchedule
    gains: LqrSolution | NestedGains
    gainopt: GainOptResult | None
    policy: ControllerPolicy
    cost: float
    certified: bool = True

    @property
    def F(self) -> np.ndarray | None:
        return None if self.gainopt is None else self.gainopt.F


def synthesize(model: PlantModel, pattern: Pattern, mode: Mode,
               grad_tol: float = 1e-9) -> Synthesis:
    """Gains, estimators, innovation gain and optimal cost for one pattern.

    Examples
    --------
    >>> from delqg import corpus
    >>> sc = corpus.load("nested_2x2")
    >>> syn = synthesize(sc.model, sc.pattern, sc.mode)
    >>> round(syn.cost, 6)
    12.700948
    """
    if pattern is Pattern.NO_DELAY:
        return _synthesize_nodelay(model, mode)
    est = estimator_schedule(model, pattern, mode)
    if pattern is Pattern.ONE_INF:
        gains = nested_nodelay_gains(model)
    else:
        gains = lqr_gains(model.A, model.B, model.Q, model.Rw, model.S, model.N)
    structure = FStructure.for_pattern(pattern, model.dims.m1, model.m, est.q1, est.q)
    res = solve_F(model, pattern, mode, gains, est, structure, grad_tol)
    policy = assemble_policy(model, pattern, mode, gains, res.F, est)
    if mode is Mode.CONSTRAINED_OUTPUT:
        from .sim import exact_closed_loop_cost

        return Synthesis(model, pattern, mode, est, gains, res, policy,
                         exact_closed_loop_cost(model, policy), certified=False)
    return Synthesis(model, pattern, mode, est, gains, res, policy, res.total_cost)


def _synthesize_nodelay(model: PlantModel, mode: Mode) -> Synthesis:
    if mode is not Mode.STATE:
        raise ValueError("the no-delay baseline is defined for state feedback only")
    est = state_feedback_covs(model, Pattern.NO_DELAY)
    gains = nested_nodelay_gains(model)
    policy = assemble_policy(model, Pattern.NO_DELAY, mode, gains, None, est)
    return Synthesis(model, Pattern.NO_DELAY, mode, est, gains, None, policy,
                     nodelay_cost(model, gains))


def nodelay_cost(model: PlantModel, gains: NestedGains) -> float:
    """Closed-form expected cost of the no-delay nested law (state feedback).

    The cost splits over the orthogonal pair ``X = [x1; xt2]`` and
    ``x2 - xt2``: each accumulates its fresh noise weighted by its own
    value matrix.
    """
    from .estimation import pinv

    n1 = model.dims.n1
    V, cov0 = np.asarray(model.V), np.asarray(model.cov0)

    def split(cov):
        L = cov[n1:, :n1] @ pinv(cov[:n1, :n1])
        Ln = np.vstack([np.eye(n1), L])
        return Ln @ cov[:n1, :n1] @ Ln.T, cov[n1:, n1:] - L @ cov[:n1, n1:]

    X0, xi0 = split(cov0)
    Xv, xiv = split(V)
    P, P22 = gains.P, gains.P22
    cost = np.trace(P[0] @ X0) + np.trace(P22[0] @ xi0)
    for t in range(model.N):
        cost += np.trace(P[t + 1] @ Xv) + np.trace(P22[t + 1] @ xiv)
    return float(cost)


def centralized_state_cost(model: PlantModel) -> float:
    """Full-information LQG cost ``tr(P(0) cov0) + sum_t tr(P(t+1) V)``."""
    sol = lqr_gains(model.A, model.B, model.Q, model.Rw, model.S, model.N)
    cost = np.trace(sol.P[0] @ model.cov0)
    cost += sum(np.trace(sol.P[t + 1] @ model.V) for t in range(model.N))
    return float(cost)


def noiseless_cost(model: PlantModel, x0: np.ndarray) -> float:
    """LQR cost ``x0' P(0) x0`` of a deterministic trajectory."""
    sol = lqr_gains(model.A, model.B, model.Q, model.Rw, model.S, model.N)
    x0 = np.asarray(x0, dtype=float)
    return float(x0 @ sol.P[0] @ x0)


def state_feedback_version(model: PlantModel) -> PlantModel:
    """Same plant with the observation model dropped."""
    return model.replace(C=None, W=None)


def pattern_costs(model: PlantModel) -> dict[Pattern, float]:
    """Optimal costs of all four patterns under state feedback."""
    sf = state_feedback_version(model)
    return {p: synthesize(sf, p, Mode.STATE).cost for p in Pattern}
