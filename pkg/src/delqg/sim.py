"""Closed-loop evaluation: exact second-moment propagation and Monte Carlo.

Both evaluators drive the same one-stage transition,
:func:`closed_loop_step`, which applies the policy to the plant and steps
the players' filters.  The exact evaluator recovers the stage map's
matrices by feeding it identity batches, so it checks the executable
law itself rather than a separate algebraic model of it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .estimation import FilterState, innovations, one_inf_family, step_filters
from .model import PlantModel
from .policy import ControllerPolicy


def closed_loop_step(policy: ControllerPolicy, t: int, x: np.ndarray, state: FilterState,
                     v: np.ndarray, w: np.ndarray):
    """One stage of plant and filters.

    Returns ``(x_next, state_next, u, y, u2hat)``; all arrays are batched.
    """
    model, est = policy.model, policy.est
    y = x @ est.C.T + w
    u, u2hat = policy.controls(t, state, y)
    x_next = x @ np.asarray(model.A).T + u @ np.asarray(model.B).T + v
    state_next = step_filters(state, model, est, y, u, u2hat)
    return x_next, state_next, u, y, u2hat


def _cov_factor(M: np.ndarray) -> np.ndarray:
    """``L`` with ``L L' = M`` for a PSD ``M`` (eigenvalue square root)."""
    M = np.asarray(M, dtype=float)
    if not M.size:
        return M
    s, U = np.linalg.eigh((M + M.T) / 2)
    return U * np.sqrt(np.clip(s, 0.0, None))


# ---------------------------------------------------------------------------
# exact propagation

@dataclass(frozen=True, eq=False)
class Moments:
    """Second moments of ``z = [x; xhat; xhathat]`` and of ``u`` per stage."""

    Ezz: np.ndarray          # (N+1, 3n, 3n)
    Euu: np.ndarray          # (N, m, m)
    stage_costs: np.ndarray  # (N+1,), last entry is the terminal cost

    @property
    def cost(self) -> float:
        return float(math.fsum(self.stage_costs))

    def block(self, t: int, sel: np.ndarray) -> np.ndarray:
        """``E[(sel z)(sel z)']`` at stage ``t`` for a selector matrix ``sel``."""
        return sel @ self.Ezz[t] @ sel.T


def stage_maps(policy: ControllerPolicy, t: int):
    """Matrices of the linear stage map ``(z, w, v) -> (z_next, u)``.

    Returns ``(Mz, Mu)`` acting on the stacked column ``[z; w; v]``.
    """
    model, est = policy.model, policy.est
    n, q = model.n, est.C.shape[0]
    dim = 3 * n + q + n
    basis = np.vstack([np.zeros(dim), np.eye(dim)])
    x, xh, xhh = basis[:, :n], basis[:, n:2 * n], basis[:, 2 * n:3 * n]
    w, v = basis[:, 3 * n:3 * n + q], basis[:, 3 * n + q:]
    state = FilterState(xh, xhh, t)
    x1, s1, u, _, _ = closed_loop_step(policy, t, x, state, v, w)
    out_z = np.concatenate([x1, s1.xhat, s1.xhathat], axis=1)
    offset = np.max(np.abs(out_z[0])) + np.max(np.abs(u[0]))
    if offset > 0:
        raise ValueError("policy is not linear: nonzero response to zero input")
    return (out_z[1:] - out_z[0]).T, (u[1:] - u[0]).T


def propagate_moments(model: PlantModel, policy: ControllerPolicy) -> Moments:
    """Propagate ``E[z z']`` exactly through the closed loop."""
    n, N = model.n, model.N
    W = policy.est.W
    Q, Rw, S = (np.asarray(M) for M in (model.Q, model.Rw, model.S))
    Ezz = np.zeros((N + 1, 3 * n, 3 * n))
    Euu = np.zeros((N, model.m, model.m))
    Ezz[0, :n, :n] = model.cov0
    costs = np.zeros(N + 1)
    for t in range(N):
        Mz, Mu = stage_maps(policy, t)
        Cov = np.zeros((Mz.shape[1], Mz.shape[1]))
        Cov[:3 * n, :3 * n] = Ezz[t]
        q = W.shape[0]
        Cov[3 * n:3 * n + q, 3 * n:3 * n + q] = W
        Cov[3 * n + q:, 3 * n + q:] = model.V
        Z = Mz @ Cov @ Mz.T
        Ezz[t + 1] = (Z + Z.T) / 2
        Euu[t] = Mu @ Cov @ Mu.T
        costs[t] = np.trace(Q @ Ezz[t, :n, :n]) + np.trace(Rw @ Euu[t])
    costs[N] = np.trace(S @ Ezz[N, :n, :n])
    return Moments(Ezz, Euu, costs)


def exact_closed_loop_cost(model: PlantModel, policy: ControllerPolicy) -> float:
    """Expected quadratic cost of ``policy``, exact up to rounding."""
    return propagate_moments(model, policy).cost


def decision_state_covariance(policy: ControllerPolicy, moments: Moments) -> np.ndarray:
    """``E[xbar xbar']`` for the state the gain objective is written in.

    ``xbar = xhat`` for the common-history laws and
    ``[xhat1; xhathat2; xhathat2 - xhat2]`` for the nested (1,inf) law.
    """
    n, n1 = policy.model.n, policy.model.dims.n1
    if not one_inf_family(policy.pattern):
        sel = np.zeros((n, 3 * n))
        sel[:, n:2 * n] = np.eye(n)
    else:
        n2 = n - n1
        sel = np.zeros((n + n2, 3 * n))
        sel[:n1, n:n + n1] = np.eye(n1)
        sel[n1:n, 2 * n + n1:] = np.eye(n2)
        sel[n:, 2 * n + n1:] = np.eye(n2)
        sel[n:, n + n1:2 * n] = -np.eye(n2)
    return np.array([moments.block(t, sel) for t in range(policy.N + 1)])


# ---------------------------------------------------------------------------
# Monte Carlo

def rollout_normals(seed: int, rollouts: int, dim: int) -> np.ndarray:
    """Standard normal draws, one independent counter-based stream per rollout.

    Rollout ``r`` uses a Philox generator keyed by ``seed`` whose counter
    starts at ``r`` in its most significant word, so streams never overlap
    and a rollout's draws do not depend on how many others are run.
    """
    key = np.random.SeedSequence(seed).generate_state(2, np.uint64)
    out = np.empty((rollouts, dim))
    for r in range(rollouts):
        bitgen = np.random.Philox(key=key, counter=[0, 0, 0, r])
        out[r] = np.random.Generator(bitgen).standard_normal(dim)
    return out


@dataclass(frozen=True, eq=False)
class LagCorrelation:
    t: int
    tau: int
    mean: np.ndarray
    se: np.ndarray


@dataclass(frozen=True, eq=False)
class SimulationReport:
    """Monte Carlo estimate of the expected cost plus estimator diagnostics.

    ``innov_*`` refer to the innovation the structured gain acts on and
    ``Theta`` to its scheduled covariance.  ``lags`` hold sample means of
    ``iota(t) y(tau)'`` for ``tau < t``, restricted to the innovation and
    observations of player 1 under the nested patterns.
    """

    mean_cost: float
    std_err: float
    rollouts: int
    seed: int
    stage_costs: np.ndarray
    innov_mean: np.ndarray
    innov_se: np.ndarray
    innov_cov: np.ndarray
    innov_cov_se: np.ndarray
    Theta: np.ndarray
    lags: list[LagCorrelation] = field(default_factory=list)
    block1_gap: float | None = None
    xi_mean: np.ndarray | None = None
    xi_se: np.ndarray | None = None

    def within(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean_cost - value) <= k * self.std_err

    def estimator_checks(self, k: float = 3.0) -> dict[str, bool]:
        def ok(dev, se):
            return bool(np.all(np.abs(dev) <= k * se))

        iu = np.triu_indices(self.Theta.shape[1])
        checks = {
            "innovation mean": ok(self.innov_mean, self.innov_se),
            "innovation covariance": ok((self.innov_cov - self.Theta)[:, iu[0], iu[1]],
                                        self.innov_cov_se[:, iu[0], iu[1]]),
            "lag orthogonality": all(ok(g.mean, g.se) for g in self.lags),
        }
        if self.block1_gap is not None:
            checks["block-1 agreement"] = self.block1_gap <= 1e-10
        return checks


def monte_carlo(model: PlantModel, policy: ControllerPolicy, rollouts: int, seed: int = 0,
                diagnostics: bool = True) -> SimulationReport:
    """Seeded rollouts of the closed loop, vectorized over rollouts."""
    if rollouts < 1:
        raise ValueError("rollouts must be positive")
    est = policy.est
    n, N, n1 = model.n, model.N, model.dims.n1
    q = est.C.shape[0]
    noisy_w = bool(np.any(est.W != 0))
    qw = q if noisy_w else 0
    z = rollout_normals(seed, rollouts, n + N * (n + qw))
    Lx0, Lv, Lw = _cov_factor(model.cov0), _cov_factor(model.V), _cov_factor(est.W)

    x = z[:, :n] @ Lx0.T + np.asarray(model.mean0)
    state = FilterState.initial(model, rollouts)
    shadow = state if one_inf_family(policy.pattern) and diagnostics else None
    Q, Rw, S = (np.asarray(M) for M in (model.Q, model.Rw, model.S))

    nested = one_inf_family(policy.pattern)
    per = np.zeros((rollouts, N + 1))
    iotas, obs = [], []
    block1_gap = 0.0
    for t in range(N):
        off = n + t * (n + qw)
        v = z[:, off:off + n] @ Lv.T
        w = z[:, off + n:off + n + qw] @ Lw.T if noisy_w else np.zeros((rollouts, q))
        iota = innovations(model, est, x @ est.C.T + w, state)
        x_next, state_next, u, y, u2hat = closed_loop_step(policy, t, x, state, v, w)
        per[:, t] = np.einsum("ri,ij,rj->r", x, Q, x) + np.einsum("ri,ij,rj->r", u, Rw, u)
        if diagnostics:
            iotas.append(iota)
            obs.append(y[:, :est.q1] if nested else y)
        if shadow is not None:
            shadow = step_filters(shadow, model, est, y, u, u2hat, enforce=False)
            gap = np.max(np.abs(shadow.xhathat[:, :n1] - state_next.xhat[:, :n1]))
            block1_gap = max(block1_gap, float(gap))
        x, state = x_next, state_next
    per[:, N] = np.einsum("ri,ij,rj->r", x, S, x)

    totals = per.sum(axis=1)
    mean = math.fsum(totals) / rollouts
    sd = float(np.std(totals, ddof=1)) if rollouts > 1 else float("inf")
    stage_costs = np.array([math.fsum(per[:, t]) / rollouts for t in range(N + 1)])

    qn = est.q
    if not diagnostics:
        empty = np.zeros((N, qn))
        return SimulationReport(mean, sd / math.sqrt(rollouts), rollouts, seed, stage_costs,
                                empty, empty, np.zeros((N, qn, qn)), np.zeros((N, qn, qn)),
                                est.Theta)
    I = np.stack(iotas, axis=1)              # (R, N, q)
    sqrtR = math.sqrt(rollouts)
    innov_mean = I.mean(axis=0)
    innov_se = I.std(axis=0, ddof=1) / sqrtR
    prod = I[:, :, :, None] * I[:, :, None, :]
    innov_cov = prod.mean(axis=0)
    innov_cov_se = prod.std(axis=0, ddof=1) / sqrtR

    lags = []
    k = est.q1 if nested else qn
    for t in range(N):
        for tau in range(t):
            g = I[:, t, :k, None] * obs[tau][:, None, :]
            lags.append(LagCorrelation(t, tau, g.mean(axis=0), g.std(axis=0, ddof=1) / sqrtR))

    xi_mean = xi_se = None
    if nested:
        xi = state.xhathat[:, n1:] - state.xhat[:, n1:]
        xi_mean, xi_se = xi.mean(axis=0), xi.std(axis=0, ddof=1) / sqrtR
    return SimulationReport(mean, sd / sqrtR, rollouts, seed, stage_costs, innov_mean, innov_se,
                            innov_cov, innov_cov_se, est.Theta, lags,
                            block1_gap if shadow is not None else None, xi_mean, xi_se)
