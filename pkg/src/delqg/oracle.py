"""Brute-force certification over all information-consistent linear policies.

Every policy in the class is ``u(t) = sum_tau G(t, tau) y(tau)`` with
``G(t, tau)`` zero wherever the information pattern hides ``y(tau)`` from
the player choosing ``u(t)``.  Stacking the horizon gives

    x = Phi w + Psi u,    y = Cb x + D w,    u = G y

with ``w = (x(0), v(0..N-1), w(0..N-1))``.  Because ``Cb Psi`` is strictly
block lower triangular, ``u = (I - G Cb Psi)^{-1} G (Cb Phi + D) w``, and
the cost is a trace against the block-diagonal covariance of ``w``.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import linalg, optimize

from .estimation import FilterState, step_filters
from .model import Mode, Pattern, PlantModel
from .policy import ControllerPolicy


def info_mask(model: PlantModel, pattern: Pattern, mode: Mode) -> np.ndarray:
    """Boolean ``(N m, N p)`` mask of permitted history-gain entries.

    Rows are ``u(t)`` stacked over stages, columns ``y(tau)``.
    """
    d, N = model.dims, model.N
    C, _, p1 = model.observation(mode)
    p, m1, m = C.shape[0], d.m1, model.m
    mask = np.zeros((N * m, N * p), dtype=bool)
    for t in range(N):
        r1 = slice(t * m, t * m + m1)
        r2 = slice(t * m + m1, (t + 1) * m)
        for tau in range(t + 1):
            c1 = slice(tau * p, tau * p + p1)
            c2 = slice(tau * p + p1, (tau + 1) * p)
            past = tau < t
            # player 1
            mask[r1, c1] = True
            if pattern in (Pattern.ONE_ZERO, Pattern.CENTRALIZED):
                mask[r1, c2] = True
            # player 2
            mask[r2, c2] = True
            if past or pattern in (Pattern.NO_DELAY, Pattern.CENTRALIZED):
                mask[r2, c1] = True
    return mask


@dataclass(frozen=True, eq=False)
class StructuredPolicyParams:
    """Free history gains as a flat vector ``theta`` over ``mask``."""

    mask: np.ndarray
    theta: np.ndarray
    m1: int
    p: int

    @property
    def m(self) -> int:
        return self.mask.shape[0] // (self.mask.shape[1] // self.p)

    def matrix(self) -> np.ndarray:
        G = np.zeros(self.mask.shape)
        G[self.mask] = self.theta
        return G

    def index(self) -> list[tuple[int, int, int, int, int]]:
        """``(player, t, tau, input row, observation column)`` per parameter."""
        m = self.m
        out = []
        for r, c in np.argwhere(self.mask):
            t, i = divmod(int(r), m)
            tau, j = divmod(int(c), self.p)
            player = 1 if i < self.m1 else 2
            out.append((player, t, tau, i, j))
        return out

    @classmethod
    def from_matrix(cls, mask, G, m1, p) -> "StructuredPolicyParams":
        return cls(mask, np.asarray(G)[mask].copy(), m1, p)


class LiftedProblem:
    """Stacked-horizon representation of one plant and information pattern."""

    def __init__(self, model: PlantModel, pattern: Pattern, mode: Mode):
        self.model, self.pattern, self.mode = model, pattern, mode
        A, B = np.asarray(model.A), np.asarray(model.B)
        N, n, m = model.N, model.n, model.m
        C, W, _ = model.observation(mode)
        p = C.shape[0]
        noisy = mode.observes_output
        pw = p if noisy else 0
        dw = n + N * n + N * pw
        Phi = np.zeros(((N + 1) * n, dw))
        Psi = np.zeros(((N + 1) * n, N * m))
        Phi[:n, :n] = np.eye(n)
        for t in range(N):
            rows, nxt = slice(t * n, (t + 1) * n), slice((t + 1) * n, (t + 2) * n)
            Phi[nxt] = A @ Phi[rows]
            Phi[nxt, n + t * n:n + (t + 1) * n] += np.eye(n)
            Psi[nxt] = A @ Psi[rows]
            Psi[nxt, t * m:(t + 1) * m] += B
        Cb = np.zeros((N * p, (N + 1) * n))
        D = np.zeros((N * p, dw))
        for t in range(N):
            Cb[t * p:(t + 1) * p, t * n:(t + 1) * n] = C
            if noisy:
                D[t * p:(t + 1) * p, n + N * n + t * p:n + N * n + (t + 1) * p] = np.eye(p)
        blocks = [model.cov0] + [model.V] * N + ([W] * N if noisy else [])
        self.Omega = linalg.block_diag(*blocks)
        self.Qbar = linalg.block_diag(*([model.Q] * N + [model.S]))
        self.Rbar = linalg.block_diag(*([model.Rw] * N))
        self.Phi, self.Psi = Phi, Psi
        self.Y = Cb @ Phi + D
        self.L = Cb @ Psi
        self.mask = info_mask(model, pattern, mode)
        self.p, self.m1 = p, model.dims.m1

    def closed_loop(self, G: np.ndarray):
        Z = np.linalg.inv(np.eye(G.shape[0]) - G @ self.L)
        Mu = Z @ G @ self.Y
        Mx = self.Phi + self.Psi @ Mu
        return Z, Mu, Mx

    def cost(self, G: np.ndarray) -> float:
        _, Mu, Mx = self.closed_loop(G)
        return float(np.sum((self.Rbar @ Mu @ self.Omega) * Mu)
                     + np.sum((self.Qbar @ Mx @ self.Omega) * Mx))

    def cost_grad(self, G: np.ndarray):
        Z, Mu, Mx = self.closed_loop(G)
        RMu, QMx = self.Rbar @ Mu, self.Qbar @ Mx
        J = float(np.sum((RMu @ self.Omega) * Mu) + np.sum((QMx @ self.Omega) * Mx))
        Gm = 2 * (RMu + self.Psi.T @ QMx) @ self.Omega
        grad = Z.T @ Gm @ (self.Y + self.L @ Mu).T
        return J, np.where(self.mask, grad, 0.0)

    def params(self, theta) -> StructuredPolicyParams:
        return StructuredPolicyParams(self.mask, np.asarray(theta, dtype=float), self.m1, self.p)

    def fun(self, theta):
        G = np.zeros(self.mask.shape)
        G[self.mask] = theta
        J, grad = self.cost_grad(G)
        return J, grad[self.mask]


def exact_policy_cost(model: PlantModel, pattern: Pattern, mode: Mode,
                      params: StructuredPolicyParams) -> float:
    """Exact expected cost of a history-gain policy."""
    prob = LiftedProblem(model, pattern, mode)
    if params.mask.shape != prob.mask.shape or np.any(params.mask != prob.mask):
        raise ValueError("parameter index map does not match the information pattern")
    return prob.cost(params.matrix())


def params_from_policy(policy: ControllerPolicy, pattern: Pattern | None = None,
                       atol: float = 1e-9) -> StructuredPolicyParams:
    """History gains of a filter-based policy.

    The filter states are linear in the observation history, so pushing the
    stacked observation basis through the policy and its filters yields the
    gain of every ``u(t)`` on every ``y(tau)``.  Raises if the policy reads
    an observation its pattern forbids.
    """
    model, est = policy.model, policy.est
    pattern = pattern or policy.pattern
    N, n, p = model.N, model.n, est.C.shape[0]
    basis = N * p
    state = FilterState(np.zeros((basis, n)), np.zeros((basis, n)), 0)
    G = np.zeros((N * model.m, basis))
    for t in range(N):
        y = np.zeros((basis, p))
        y[t * p:(t + 1) * p] = np.eye(p)
        u, u2hat = policy.controls(t, state, y)
        G[t * model.m:(t + 1) * model.m] = u.T
        state = step_filters(state, model, est, y, u, u2hat)
    mask = info_mask(model, pattern, policy.mode)
    leak = np.max(np.abs(G[~mask]), initial=0.0)
    if leak > atol * max(1.0, np.max(np.abs(G))):
        raise ValueError(f"policy uses forbidden observations (gain {leak:.3e})")
    return StructuredPolicyParams.from_matrix(mask, G, model.dims.m1, p)


@dataclass(frozen=True, eq=False)
class OracleResult:
    best_cost: float
    best_params: StructuredPolicyParams
    restarts: int
    converged: tuple[bool, ...]
    costs: tuple[float, ...]
    grad_norms: tuple[float, ...]


def _threads(jobs: int) -> int:
    env = os.environ.get("DELQG_THREADS")
    cap = int(env) if env else (os.cpu_count() or 1)
    return max(1, min(cap, jobs))


def _descend(prob: LiftedProblem, theta0: np.ndarray, tol: float, max_iters: int):
    res = optimize.minimize(prob.fun, theta0, jac=True, method="BFGS",
                            options={"gtol": tol, "maxiter": max_iters, "norm": np.inf})
    theta = res.x
    J, g = prob.fun(theta)
    # refine with Newton steps on a finite-difference Hessian of the gradient
    for _ in range(20):
        gnorm = np.max(np.abs(g), initial=0.0)
        if gnorm <= tol:
            break
        H = _fd_hessian(prob, theta, g)
        step = -np.linalg.lstsq(H, g, rcond=1e-12)[0]
        a = 1.0
        while a > 1e-8:
            J2, g2 = prob.fun(theta + a * step)
            if J2 <= J:
                break
            a /= 2
        else:
            break
        theta, J, g = theta + a * step, J2, g2
    gnorm = float(np.max(np.abs(g), initial=0.0))
    return theta, J, gnorm


def _fd_hessian(prob, theta, g, eps=1e-6):
    k = theta.size
    H = np.empty((k, k))
    for i in range(k):
        e = np.zeros(k)
        e[i] = eps
        H[:, i] = (prob.fun(theta + e)[1] - prob.fun(theta - e)[1]) / (2 * eps)
    return (H + H.T) / 2


def oracle_optimize(model: PlantModel, pattern: Pattern, mode: Mode, restarts: int = 8,
                    tol: float = 1e-10, max_iters: int = 5000, seed: int = 0,
                    init: list[StructuredPolicyParams] | None = None) -> OracleResult:
    """Minimize the exact cost over all information-consistent linear policies.

    Runs ``restarts`` random initializations (entries ``N(0, 1) / (N n)``)
    plus each policy in ``init``.  A start is flagged converged when its
    gradient max-norm reaches ``tol``; the best iterate is returned either way.
    """
    if restarts < 1:
        raise ValueError("restarts must be at least 1")
    prob = LiftedProblem(model, pattern, mode)
    k = int(prob.mask.sum())
    rng = np.random.default_rng(seed)
    starts = [rng.standard_normal(k) / (model.N * model.n) for _ in range(restarts)]
    for par in init or []:
        starts.append(np.asarray(par.theta, dtype=float))

    with ThreadPoolExecutor(max_workers=_threads(len(starts))) as pool:
        runs = list(pool.map(lambda th: _descend(prob, th, tol, max_iters), starts))
    costs = tuple(r[1] for r in runs)
    best = int(np.argmin(costs))
    return OracleResult(best_cost=costs[best], best_params=prob.params(runs[best][0]),
                        restarts=len(starts), converged=tuple(r[2] <= tol for r in runs),
                        costs=costs, grad_norms=tuple(r[2] for r in runs))
