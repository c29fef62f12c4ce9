"""Structured innovation-gain optimization.

The synthesized law leaves one free schedule, the structured gain ``F(t)``
acting on the innovations.  Its cost is a trace objective over a
deterministic covariance recursion

    Sigma(t+1) = Abar(t) Sigma(t) Abar(t)' + Nmap(F(t)) Theta(t) Nmap(F(t))'
    J_F = sum_t tr(Qbar(t) Sigma(t)) + tr(Sbar Sigma(N)) + sum_t tr(F' Rw F Theta(t))

where ``Abar`` does not depend on ``F`` and ``Nmap`` is affine in ``F``.
Propagating the costate ``P(t) = Qbar(t) + Abar(t)' P(t+1) Abar(t)``
backwards makes the objective a sum of independent per-stage quadratics,

    J_F = const + sum_t tr(P(t+1) Nmap Theta Nmap') + tr(F' Rw F Theta),

each minimized by one symmetric linear solve over the unmasked entries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .estimation import EstimatorSchedule, one_inf_family
from .model import Mode, Pattern, PlantModel
from .riccati import LqrSolution, NestedGains, NumericalError

GRAD_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class FStructure:
    """Sparsity of ``F(t)``: ``mask[i, j]`` is True where the entry is free."""

    mask: np.ndarray

    @classmethod
    def for_pattern(cls, pattern: Pattern, m1: int, m: int, q1: int, q: int) -> "FStructure":
        mask = np.ones((m, q), dtype=bool)
        if pattern is Pattern.ONE_ZERO:
            mask[m1:, :q1] = False
        elif one_inf_family(pattern):
            mask[:m1, q1:] = False
            mask[m1:, :q1] = False
        return cls(mask)

    @property
    def free(self) -> list[tuple[int, int]]:
        return [tuple(ij) for ij in np.argwhere(self.mask)]

    def project(self, F: np.ndarray) -> np.ndarray:
        return np.where(self.mask, F, 0.0)


@dataclass(frozen=True, eq=False)
class GainProblem:
    """Deterministic gain-selection problem with affine noise injection.

    ``noise_map(t, F) = N0[t] + einsum('ij,ijab->ab', F, lin[t])``.
    ``const`` collects the cost terms that no gain choice can change.
    """

    Abar: np.ndarray       # (N, k, k)
    Qbar: np.ndarray       # (N, k, k)
    Sbar: np.ndarray       # (k, k)
    Theta: np.ndarray      # (N, q, q)
    N0: np.ndarray         # (N, k, q)
    lin: np.ndarray        # (N, m, q, k, q)
    Rw: np.ndarray         # (m, m)
    structure: FStructure
    const: float = 0.0

    @property
    def N(self) -> int:
        return self.Abar.shape[0]

    def noise_map(self, t: int, F: np.ndarray) -> np.ndarray:
        return self.N0[t] + np.einsum("ij,ijab->ab", F, self.lin[t])

    def costate(self) -> np.ndarray:
        return costate_schedule(self.Abar, self.Qbar, self.Sbar)

    def sigma(self, Fs: np.ndarray) -> np.ndarray:
        k = self.Sbar.shape[0]
        Sig = np.zeros((self.N + 1, k, k))
        for t in range(self.N):
            Nt = self.noise_map(t, Fs[t])
            S = self.Abar[t] @ Sig[t] @ self.Abar[t].T + Nt @ self.Theta[t] @ Nt.T
            Sig[t + 1] = (S + S.T) / 2
        return Sig

    def objective(self, Fs: np.ndarray) -> float:
        """``J_F`` evaluated by forward covariance propagation (no costate)."""
        Fs = np.asarray([self.structure.project(F) for F in Fs])
        Sig = self.sigma(Fs)
        val = sum(np.trace(self.Qbar[t] @ Sig[t]) for t in range(self.N))
        val += np.trace(self.Sbar @ Sig[self.N])
        val += sum(np.trace(Fs[t].T @ self.Rw @ Fs[t] @ self.Theta[t]) for t in range(self.N))
        return float(val)

    def stage_system(self, t: int, P_next: np.ndarray):
        """Hessian and gradient-at-zero of the stage-``t`` quadratic over free entries."""
        free = self.structure.free
        Th = self.Theta[t]
        Nk = np.array([self.lin[t][i, j] for i, j in free]).reshape(len(free), *self.N0[t].shape)
        Ek = np.zeros((len(free),) + self.structure.mask.shape)
        for a, (i, j) in enumerate(free):
            Ek[a, i, j] = 1.0
        X = np.einsum("ab,kbc,cd->kad", P_next, Nk, Th)
        Y = np.einsum("ab,kbc,cd->kad", self.Rw, Ek, Th)
        H = 2 * (np.einsum("kad,lad->kl", X, Nk) + np.einsum("kad,lad->kl", Y, Ek))
        H = (H + H.T) / 2
        g = 2 * np.einsum("ab,bc,cd,kad->k", P_next, self.N0[t], Th, Nk)
        return H, g

    def stage_value(self, t: int, P_next: np.ndarray, F: np.ndarray) -> float:
        Nt = self.noise_map(t, F)
        Th = self.Theta[t]
        return float(np.trace(P_next @ Nt @ Th @ Nt.T) + np.trace(F.T @ self.Rw @ F @ Th))

    def gradient(self, Fs: np.ndarray) -> np.ndarray:
        """Analytic gradient of ``J_F`` on the free entries (masked entries are 0)."""
        P = self.costate()
        out = np.zeros_like(np.asarray(Fs, dtype=float))
        free = self.structure.free
        for t in range(self.N):
            H, g = self.stage_system(t, P[t + 1])
            theta = np.array([Fs[t][i, j] for i, j in free])
            grad = H @ theta + g
            for a, (i, j) in enumerate(free):
                out[t, i, j] = grad[a]
        return out


@dataclass(frozen=True, eq=False)
class GainOptResult:
    F: np.ndarray          # (N, m, q)
    Sigma: np.ndarray      # (N+1, k, k)
    Pcost: np.ndarray      # (N+1, k, k)
    jf: float
    grad_norms: np.ndarray  # (N,)
    problem: GainProblem

    @property
    def total_cost(self) -> float:
        """``J_F`` plus the gain-independent terms: the optimal expected cost."""
        return self.jf + self.problem.const


def costate_schedule(Abar: np.ndarray, Qbar: np.ndarray, Sbar: np.ndarray) -> np.ndarray:
    """``P(N) = Sbar``, ``P(t) = Qbar(t) + Abar(t)' P(t+1) Abar(t)``."""
    Abar, Qbar = np.asarray(Abar, dtype=float), np.asarray(Qbar, dtype=float)
    N = Abar.shape[0]
    P = np.empty((N + 1,) + np.shape(Sbar))
    P[N] = Sbar
    for t in range(N - 1, -1, -1):
        Pt = Qbar[t] + Abar[t].T @ P[t + 1] @ Abar[t]
        P[t] = (Pt + Pt.T) / 2
    return P


def _solve_stage(H: np.ndarray, g: np.ndarray) -> np.ndarray:
    if H.size == 0:
        return np.zeros(0)
    eig = np.linalg.eigvalsh(H)
    if eig[0] > 1e-10 * max(eig[-1], 1e-300):
        return linalg.cho_solve(linalg.cho_factor(H), -g)
    # singular innovation covariance: every minimizer is optimal, take min norm
    return np.linalg.lstsq(H, -g, rcond=1e-10)[0]


def minimize(problem: GainProblem, grad_tol: float = GRAD_TOL) -> GainOptResult:
    P = problem.costate()
    mask = problem.structure.mask
    free = problem.structure.free
    Fs = np.zeros((problem.N,) + mask.shape)
    norms = np.zeros(problem.N)
    jf = 0.0
    for t in range(problem.N):
        H, g = problem.stage_system(t, P[t + 1])
        theta = _solve_stage(H, g)
        for a, (i, j) in enumerate(free):
            Fs[t, i, j] = theta[a]
        resid = H @ theta + g
        norms[t] = np.max(np.abs(resid)) if resid.size else 0.0
        if norms[t] > grad_tol * max(1.0, np.max(np.abs(g)) if g.size else 0.0):
            raise NumericalError(f"stationarity residual {norms[t]:.3e} at stage {t}")
        jf += problem.stage_value(t, P[t + 1], Fs[t])
    Sig = problem.sigma(Fs)
    for t, S in enumerate(Sig):
        eig = np.linalg.eigvalsh(S)
        if eig.size and eig[0] < -1e-9 * max(1.0, abs(eig[-1])):
            raise NumericalError(f"Sigma({t}) is not PSD (min eigenvalue {eig[0]:.3e})")
    # Sigma(0) = 0, so the stage sum is the whole gain-dependent objective
    return GainOptResult(F=Fs, Sigma=Sig, Pcost=P, jf=float(jf), grad_norms=norms, problem=problem)


# ---------------------------------------------------------------------------
# problem assembly

def _error_cost(model: PlantModel, est: EstimatorSchedule) -> float:
    N = model.N
    Q, S = np.asarray(model.Q), np.asarray(model.S)
    return float(sum(np.trace(Q @ est.Tbar[t]) for t in range(N)) + np.trace(S @ est.Tbar[N]))


def one_zero_problem(model: PlantModel, lqr: LqrSolution, est: EstimatorSchedule,
                     structure: FStructure) -> GainProblem:
    """Common-history estimate ``xhat`` driven by ``(Rg + B F) phi``."""
    A, B, Q, Rw = (np.asarray(M) for M in (model.A, model.B, model.Q, model.Rw))
    N, n, m, q = model.N, model.n, model.m, est.q
    Abar = np.array([A - B @ lqr.H[t] for t in range(N)])
    Qbar = np.array([Q + lqr.H[t].T @ Rw @ lqr.H[t] for t in range(N)])
    lin = np.zeros((N, m, q, n, q))
    for i in range(m):
        for j in range(q):
            lin[:, i, j, :, j] = B[:, i]
    return GainProblem(Abar, Qbar, np.asarray(model.S, dtype=float), est.Theta, est.Rg.copy(),
                       lin, Rw, structure, const=_error_cost(model, est))


def one_inf_stacked_H(gains: NestedGains, t: int) -> np.ndarray:
    """``[[K11, K12, -K12], [K21, K22, J - K22]]`` acting on ``[xhat1; xhathat2; xi]``."""
    K, J, n1, m1 = gains.K[t], gains.J[t], gains.n1, gains.m1
    m, n = K.shape
    H = np.zeros((m, n + n - n1))
    H[:, :n] = K
    H[:, n:] = -K[:, n1:]
    H[m1:, n:] += J
    return H


def one_inf_problem(model: PlantModel, gains: NestedGains, est: EstimatorSchedule,
                    structure: FStructure) -> GainProblem:
    """State ``[xhat1; xhathat2; xi]`` with ``xi = xhathat2 - xhat2``.

    The noise of ``[xhat1; xhathat2]`` is what player 2's filter injects.
    The noise of ``xi`` is that minus what player 1's filter injects into
    ``xhat2``, whose input term uses ``E[u2 | phi] = ... + F22 E[psi | phi]``.
    """
    d = model.dims
    n, n1, n2, m, m1 = model.n, d.n1, d.n2, model.m, d.m1
    A, B, Q, S, Rw = (np.asarray(M, dtype=float) for M in (model.A, model.B, model.Q, model.S,
                                                            model.Rw))
    N, q, q1 = model.N, est.q, est.q1
    k = n + n2
    Atil = linalg.block_diag(A, A[n1:, n1:])
    Abar = np.empty((N, k, k))
    Qbar = np.empty((N, k, k))
    Qt = linalg.block_diag(Q, np.zeros((n2, n2)))
    for t in range(N):
        H = one_inf_stacked_H(gains, t)
        G = np.zeros((k, k))
        G[:n] = B @ H
        G[n:, n:] = B[n1:, m1:] @ gains.J[t]
        Abar[t] = Atil - G
        Qbar[t] = Qt + H.T @ Rw @ H

    N0 = np.zeros((N, k, q))
    lin = np.zeros((N, m, q, k, q))
    for t in range(N):
        Rg, Rb, psi = est.Rg[t], est.Rbar[t], est.psi_given_phi[t]
        N0[t, :n1, :q1] = Rg[:n1]
        N0[t, n1:n, :] = Rb[n1:]
        N0[t, n:, :] = Rb[n1:]
        N0[t, n:, :q1] -= Rg[n1:]
        for i in range(m):
            for j in range(q):
                E = np.zeros((m, q))
                E[i, j] = 1.0
                BE = B @ E
                blk = np.zeros((k, q))
                blk[:n1, :q1] = BE[:n1, :q1]
                blk[n1:n] = BE[n1:]
                # xhat2 input injection: B21 F11 phi + B22 F22 psi_given_phi phi
                inj2 = B[n1:, :m1] @ E[:m1, :q1] + B[n1:, m1:] @ E[m1:, q1:] @ psi
                blk[n:] = BE[n1:]
                blk[n:, :q1] -= inj2
                lin[t, i, j] = blk
    Sbar = linalg.block_diag(S, np.zeros((n2, n2)))
    return GainProblem(Abar, Qbar, Sbar, est.Theta, N0, lin, Rw, structure,
                       const=_error_cost(model, est))


def build_problem(model: PlantModel, pattern: Pattern, mode: Mode, gains, est: EstimatorSchedule,
                  structure: FStructure | None = None) -> GainProblem:
    if structure is None:
        structure = FStructure.for_pattern(pattern, model.dims.m1, model.m, est.q1, est.q)
    if one_inf_family(pattern):
        return one_inf_problem(model, gains, est, structure)
    return one_zero_problem(model, gains, est, structure)


def solve_F(model: PlantModel, pattern: Pattern, mode: Mode, gains, est: EstimatorSchedule,
            structure: FStructure | None = None, grad_tol: float = GRAD_TOL) -> GainOptResult:
    """Optimal structured gain schedule.

    ``gains`` is the :class:`LqrSolution` for the (1,0) family and the
    :class:`NestedGains` for (1,inf).
    """
    return minimize(build_problem(model, pattern, mode, gains, est, structure), grad_tol)


# ---------------------------------------------------------------------------
# finite-difference certification

def fd_gradient(problem: GainProblem, Fs: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """Central differences of :meth:`GainProblem.objective` on free entries."""
    Fs = np.array(Fs, dtype=float)
    out = np.zeros_like(Fs)
    for t in range(problem.N):
        for i, j in problem.structure.free:
            hi, lo = Fs.copy(), Fs.copy()
            hi[t, i, j] += eps
            lo[t, i, j] -= eps
            out[t, i, j] = (problem.objective(hi) - problem.objective(lo)) / (2 * eps)
    return out


def fd_gradient_check(result: GainOptResult, Fs: np.ndarray | None = None,
                      eps: float = 1e-5) -> float:
    """Max relative discrepancy between analytic and finite-difference gradients.

    Discrepancies are scaled by the largest gradient entry at ``Fs``
    (default: the optimum ``result.F``).
    """
    problem = result.problem
    Fs = result.F if Fs is None else Fs
    an = problem.gradient(Fs)
    fd = fd_gradient(problem, Fs, eps)
    scale = max(np.max(np.abs(an)), np.max(np.abs(fd)), 1e-300)
    return float(np.max(np.abs(an - fd)) / scale)
