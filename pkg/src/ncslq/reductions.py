"""Degenerate closed forms used to cross-validate the general solver.

Three independent fixed-point solvers: i.i.d. (Bernoulli) packet loss,
the delay-free Markov case, and the lossless delayed case. Each iterates
its own reduced equation set; none shares code with the general sweep.
"""

from dataclasses import dataclass

import numpy as np

from ._core import a_powers
from .errors import NotIID

__all__ = ["BernoulliSolution", "DelayFreeSolution", "LosslessSolution",
           "solve_bernoulli", "solve_delay_free", "solve_lossless"]

_DIVERGE = 1e12


@dataclass
class BernoulliSolution:
    """Fixed point of the i.i.d.-channel reduction (drop probability q)."""

    P: list                  # P[1..d+1], n x n (index 0 unused)
    M: np.ndarray            # m x n
    Gamma: np.ndarray        # m x m
    M0: np.ndarray           # m x n
    Mj: list                 # Mj[1..d], m x m
    q: float
    iterations: int
    converged: bool

    def psum(self):
        return sum(self.P[1:])

    def gains(self):
        K0 = np.linalg.solve(self.Gamma, self.M0)
        Kj = [None] + [np.linalg.solve(self.Gamma, Mj) for Mj in self.Mj[1:]]
        return K0, Kj


def solve_bernoulli(model, tol=1e-12, max_iter=100000):
    """Reduced equations for an i.i.d. channel (both transition rows equal)."""
    xi = model.chain.xi
    if np.max(np.abs(xi[0] - xi[1])) > 1e-12:
        raise NotIID("transition rows differ; channel is not i.i.d.")
    q = float(xi[0, 0])
    A, B, Q, R, d = model.A, model.B, model.Q, model.R, model.d
    n, m = model.n, model.m
    Apow = a_powers(A, max(d, 1))
    P = [None] + [np.zeros((n, n)) for _ in range(d + 1)]
    M = np.zeros((m, n))
    Gam = R.copy()
    conv = False
    it = 0
    for it in range(1, max_iter + 1):
        M0 = M @ Apow[d]
        Pn = [None] * (d + 2)
        Pn[1] = A.T @ P[1] @ A + Q - M0.T @ np.linalg.solve(Gam, M0)
        if d >= 1:
            Pn[2] = -M.T @ np.linalg.solve(Gam, M)
        for i in range(3, d + 2):
            Pn[i] = A.T @ P[i - 1] @ A
        Mn = (1.0 - q) * sum(B.T @ P[j] @ A for j in range(1, d + 2))
        Gn = (R + (1.0 - q) ** 2 * sum(B.T @ P[j] @ B for j in range(1, d + 2))
              + q * (1.0 - q) * B.T @ P[1] @ B)
        Gn = (Gn + Gn.T) / 2.0
        inc = max([np.max(np.abs(Pn[j] - P[j])) for j in range(1, d + 2)]
                  + [np.max(np.abs(Mn - M)), np.max(np.abs(Gn - Gam))])
        P, M, Gam = Pn, Mn, Gn
        if not np.isfinite(inc) or np.max(np.abs(P[1])) > _DIVERGE:
            break
        if inc < tol:
            conv = True
            break
    M0 = M @ Apow[d]
    Mj = [None] + [(1.0 - q) * M @ Apow[d - j] @ B for j in range(1, d + 1)]
    return BernoulliSolution(P=P, M=M, Gamma=Gam, M0=M0, Mj=Mj, q=q,
                             iterations=it, converged=conv)


@dataclass
class DelayFreeSolution:
    P: np.ndarray            # (2, n, n)
    Gamma: np.ndarray        # (2, m, m)
    M0: np.ndarray           # (2, m, n)
    iterations: int
    converged: bool


def solve_delay_free(model, tol=1e-12, max_iter=100000):
    """Standard coupled Riccati equations with Markov jump (d = 0)."""
    assert model.d == 0, "delay-free reduction requires d = 0"
    A, B, Q, R = model.A, model.B, model.Q, model.R
    xi = model.chain.xi
    n, m = model.n, model.m
    P = np.zeros((2, n, n))
    conv = False
    it = 0
    for it in range(1, max_iter + 1):
        Pn = np.empty_like(P)
        for mode in (0, 1):
            Gam = R + xi[mode, 1] * B.T @ P[1] @ B
            M0 = xi[mode, 1] * B.T @ P[1] @ A
            acc = Q + sum(xi[mode, b] * A.T @ P[b] @ A for b in (0, 1))
            Pn[mode] = acc - M0.T @ np.linalg.solve(Gam, M0)
            Pn[mode] = (Pn[mode] + Pn[mode].T) / 2.0
        inc = np.max(np.abs(Pn - P))
        P = Pn
        if not np.isfinite(inc) or np.max(np.abs(P)) > _DIVERGE:
            break
        if inc < tol:
            conv = True
            break
    Gamma = np.stack([R + xi[mode, 1] * B.T @ P[1] @ B for mode in (0, 1)])
    M0 = np.stack([xi[mode, 1] * B.T @ P[1] @ A for mode in (0, 1)])
    return DelayFreeSolution(P=P, Gamma=Gamma, M0=M0, iterations=it, converged=conv)


@dataclass
class LosslessSolution:
    P: np.ndarray
    Gamma: np.ndarray
    M: np.ndarray
    M0: np.ndarray
    Mj: list
    iterations: int
    converged: bool

    def F(self, s, A):
        """F^{s+1} = M A^s."""
        return self.M @ np.linalg.matrix_power(A, s)

    def certificate_margin(self, A, d):
        acc = self.P.copy()
        for s in range(d):
            As = np.linalg.matrix_power(A, s)
            acc = acc - As.T @ self.M.T @ np.linalg.solve(self.Gamma, self.M) @ As
        return float(np.linalg.eigvalsh((acc + acc.T) / 2.0)[0])


def solve_lossless(model, tol=1e-12, max_iter=100000):
    """Deterministic delayed Riccati set (every packet delivered)."""
    A, B, Q, R, d = model.A, model.B, model.Q, model.R, model.d
    n, m = model.n, model.m
    Apow = a_powers(A, max(d, 1))
    P = np.zeros((n, n))
    M = np.zeros((m, n))
    Gam = R.copy()
    conv = False
    it = 0
    for it in range(1, max_iter + 1):
        Mj = [None] + [M @ Apow[d - j] @ B for j in range(1, d + 1)]
        M0 = M @ Apow[d]
        Gn = R + B.T @ P @ B
        for s in range(1, d + 1):
            Ms = Mj[d - s + 1]
            Gn = Gn - Ms.T @ np.linalg.solve(Gam, Ms)
        Gn = (Gn + Gn.T) / 2.0
        corr = sum(Apow[j].T @ M.T @ np.linalg.solve(Gam, M) @ Apow[j] for j in range(d))
        Mn = B.T @ P @ A - B.T @ corr @ A
        Pn = A.T @ P @ A + Q - M0.T @ np.linalg.solve(Gam, M0)
        Pn = (Pn + Pn.T) / 2.0
        inc = max(np.max(np.abs(Pn - P)), np.max(np.abs(Mn - M)), np.max(np.abs(Gn - Gam)))
        P, M, Gam = Pn, Mn, Gn
        if not np.isfinite(inc) or np.max(np.abs(P)) > _DIVERGE:
            break
        if inc < tol:
            conv = True
            break
    M0 = M @ Apow[d]
    Mj = [None] + [M @ Apow[d - j] @ B for j in range(1, d + 1)]
    return LosslessSolution(P=P, Gamma=Gam, M=M, M0=M0, Mj=Mj,
                            iterations=it, converged=conv)
