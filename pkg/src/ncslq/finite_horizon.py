"""Finite-horizon backward sweep: recursion tables, gains, cost, costate check.

The sweep runs k = N down to d. Each step produces the decision-label
tables Gamma(k-d), M^j(k-d) for both conditioning modes, the cost matrices
P(k), the cross terms (S^j)'(k), and the path-indexed feedback cross terms
F^j anchored at k. Label 0 additionally gets an initial-distribution
variant (the time-0 decision conditions on no mode observation).
"""

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from ._core import (OVERFLOW_LIMIT, GammaInv, LabelTables, a_powers, path_F_at,
                    step_P, step_S, step_gamma_M)
from .chain import chain_powers, enumerate_paths
from .errors import HorizonMismatch, NumericalOverflow, TooLarge

__all__ = ["RecursionTables", "FiniteGain", "solve_finite", "finite_gain",
           "optimal_cost_finite", "costate_check", "lemma3_margins"]


@dataclass
class RecursionTables:
    """Everything produced by one backward sweep.

    P[k][mode]          n x n, k = d .. N+1 (P[N+1] = H)
    Gamma[t][mode]      m x m, labels t = 0 .. N-d
    M[j][t][mode]       m x n for j = 0, m x m for j = 1..d
    S[j][k][mode]       (S^j)' stored n x m, defined for k <= N+1-j
    F[k][j][modes]      m x n, anchored at k, keyed by the mode tuple
                        (theta_{k-d+j-1}, ..., theta_{k-1})
    Gamma_init, M_init  label-0 tables under the initial distribution
    """

    N: int
    d: int
    n: int
    m: int
    P: dict
    Gamma: dict
    M: dict
    S: dict
    F: dict
    Gamma_init: np.ndarray
    M_init: list
    labels: LabelTables = field(repr=False)
    _ginv_init: GammaInv = field(repr=False, default=None)

    def gamma_at(self, t, mode):
        """Gamma at a decision label; mode=None selects the initial-law variant."""
        if mode is None:
            return self.Gamma_init
        return self.Gamma[t][mode]

    def M_at(self, t, mode):
        if mode is None:
            return self.M_init
        return [self.M[t][j][mode] for j in range(self.d + 1)]

    def ginv_at(self, t, mode):
        if mode is None:
            return self._ginv_init
        return self.labels.gamma[t][mode]


@dataclass
class FiniteGain:
    """Time-varying optimal feedback: u(t) = -K0[t] x(t) - sum_j Kj[t][j] u(t-d+j-1).

    Gains at label t are selected by the mode at t-1; label 0 uses the
    initial-distribution gain (no mode has been observed yet).
    """

    N: int
    d: int
    K0: dict          # t -> [m x n per mode]
    Kj: dict          # t -> [None, m x m per mode for j=1..d]
    K0_init: np.ndarray
    Kj_init: list

    def at(self, t, mode_prev):
        if t == 0 or mode_prev is None:
            return self.K0_init, self.Kj_init
        return (self.K0[t][mode_prev],
                [None] + [self.Kj[t][j][mode_prev] for j in range(1, self.d + 1)])


def solve_finite(model, N):
    """Backward sweep for horizon N >= d; returns the full RecursionTables."""
    if N < model.d:
        raise HorizonMismatch(f"horizon N={N} must be at least d={model.d}")
    A, B, Q, R, H, d = model.A, model.B, model.Q, model.R, model.H, model.d
    xi = model.chain.xi
    n, m = model.n, model.m
    xp = chain_powers(xi, d + 2)
    Apow = a_powers(A, d + 1)

    labels = LabelTables(R, d, n, m)
    labels.max_real = N - d
    P = {N + 1: np.stack([H, H])}
    S = {j: {} for j in range(1, d + 1)}
    F = {}
    Gamma = {}
    M = {}

    for k in range(N, d - 1, -1):
        t = k - d
        gammas = []
        Ms_both = [[] for _ in range(d + 1)]
        for mode in (0, 1):
            G_, Ms = step_gamma_M(A, B, Q, R, d, xp, Apow, P[k + 1], labels, t,
                                  xi[mode], step=k, mode=mode)
            gammas.append(GammaInv(G_, step=k, mode=mode))
            for j in range(d + 1):
                Ms_both[j].append(Ms[j])
        Gamma[t] = np.stack([g.mat for g in gammas])
        M[t] = [np.stack(Ms_both[j]) for j in range(d + 1)]
        labels.store(t, gammas, M[t])

        P[k] = step_P(A, Q, xi, P[k + 1], labels, k)
        S_next = [None] + [S[j].get(k + 1) for j in range(1, d + 1)] if d >= 1 else [None]
        ST_k = step_S(A, B, d, xi, P[k + 1], S_next, labels, k)
        for j in range(1, d + 1):
            if ST_k[j] is not None:
                S[j][k] = ST_k[j]
        F[k] = path_F_at(d, ST_k, labels, k)

        if max(np.max(np.abs(P[k])), np.max(np.abs(Gamma[t]))) > OVERFLOW_LIMIT:
            raise NumericalOverflow(f"table norm exceeded {OVERFLOW_LIMIT:.0e} at step {k}")

    pi0 = model.chain.initial_law()
    G_init, M_init = step_gamma_M(A, B, Q, R, d, xp, Apow, P[d + 1], labels, 0, pi0)
    tables = RecursionTables(N=N, d=d, n=n, m=m, P=P, Gamma=Gamma, M=M, S=S, F=F,
                             Gamma_init=G_init, M_init=M_init, labels=labels,
                             _ginv_init=GammaInv(G_init))
    return tables


def finite_gain(tables):
    """Optimal gains from completed tables: K0 = Gamma^{-1} M^0, Kj = Gamma^{-1} M^j."""
    d = tables.d
    K0 = {}
    Kj = {}
    for t in tables.Gamma:
        ginv = [tables.labels.gamma[t][mode] for mode in (0, 1)]
        K0[t] = [ginv[mode].solve(tables.M[t][0][mode]) for mode in (0, 1)]
        Kj[t] = [None] + [
            np.stack([ginv[mode].solve(tables.M[t][j][mode]) for mode in (0, 1)])
            for j in range(1, d + 1)
        ]
        # restore per-mode indexing for Kj
        Kj[t] = [None] + [[Kj[t][j][mode] for mode in (0, 1)] for j in range(1, d + 1)]
    gi = tables._ginv_init
    K0_init = gi.solve(tables.M_init[0])
    Kj_init = [None] + [gi.solve(tables.M_init[j]) for j in range(1, d + 1)]
    return FiniteGain(N=tables.N, d=d, K0=K0, Kj=Kj, K0_init=K0_init, Kj_init=Kj_init)


def _prefix_paths(model):
    """(path, probability, [x(0..d)]) for every mode prefix theta_0..theta_{d-1}."""
    d = model.d
    A, B = model.A, model.B
    pi0 = model.chain.initial_law()
    xi = model.chain.xi
    out = []
    for pre in product((0, 1), repeat=d):
        w = 1.0
        for k, th in enumerate(pre):
            w *= pi0[th] if k == 0 else xi[pre[k - 1], th]
        if w == 0.0:
            continue
        xs = [model.init.x0]
        for k in range(d):
            xs.append(A @ xs[-1] + pre[k] * (B @ model.init.u_at(k - d)))
        out.append((pre, w, xs))
    return out


def optimal_cost_finite(tables, model):
    """Optimal finite-horizon cost J*_N.

    Evaluates sum_{k<d} E[x'Qx] plus E[x(d)' lambda_{d-1}], with the d-step
    open-loop prefix enumerated exactly (the prefix inputs are the known
    history, so 2^d paths cover the expectation). Control cost before step d
    is not part of the objective.
    """
    d, N = tables.d, tables.N
    A, B, Q = model.A, model.B, model.Q
    if d == 0:
        # value at time 0 under the initial distribution
        pi0 = model.chain.initial_law()
        acc = Q + sum(pi0[b] * A.T @ tables.P[1][b] @ A for b in (0, 1))
        acc = acc - tables.M_init[0].T @ tables._ginv_init.solve(tables.M_init[0])
        x0 = model.init.x0
        return float(x0 @ acc @ x0)

    total = 0.0
    Fd = tables.F[d]
    for pre, w, xs in _prefix_paths(model):
        xd = xs[d]
        val = sum(xs[k] @ Q @ xs[k] for k in range(d))
        val += xd @ tables.P[d][pre[d - 1]] @ xd
        for s in range(1, d + 1):
            lbl = d - s
            if tables.labels.is_pad(lbl):
                continue
            cm = None if lbl == 0 else pre[lbl - 1]
            ginv = tables.ginv_at(lbl, cm)
            Ml = tables.M_at(lbl, cm)
            Fv = Fd[d - s + 1][tuple(pre[d - s:])]
            val -= xd @ Fv.T @ ginv.solve(Ml[0] @ xs[d - s])
        for s in range(0, d):
            uu = model.init.u_at(s - d)
            for i in range(d - s, d + 1):
                lbl = d - i
                if tables.labels.is_pad(lbl):
                    continue
                cm = None if lbl == 0 else pre[lbl - 1]
                ginv = tables.ginv_at(lbl, cm)
                Ml = tables.M_at(lbl, cm)
                Fv = Fd[d - i + 1][tuple(pre[d - i:])]
                val -= xd @ Fv.T @ ginv.solve(Ml[s + 1 - d + i] @ uu)
        total += w * val
    return float(total)


def lemma3_margins(tables, k):
    """Min eigenvalues of P(k) - sum_s F'Gamma^{-1}F over all mode assignments.

    The assignment runs over (theta_{k-d-1}, ..., theta_{k-1}); returns a
    dict keyed by ((theta_{k-d}, ..., theta_{k-1}), theta_{k-d-1}). Only
    valid at steps where the full anchored F family exists
    (d <= k <= N+1-d for d >= 1).
    """
    d = tables.d
    if d == 0:
        return {((), mode): float(np.linalg.eigvalsh(tables.P[k][mode])[0])
                for mode in (0, 1)}
    Fk = tables.F[k]
    if d not in Fk:
        raise TooLarge(f"anchored F family incomplete at step {k}")
    out = {}
    for seq in product((0, 1), repeat=d):     # modes at k-d .. k-1
        for cond in (0, 1):                   # mode at k-d-1
            modes = (cond,) + seq
            acc = tables.P[k][seq[-1]].copy()
            for s in range(0, d):
                Fv = Fk[s + 1][seq[s:]]
                ginv = tables.labels.gamma[k - d + s][modes[s]]
                acc = acc - Fv.T @ ginv.solve(Fv)
            acc = (acc + acc.T) / 2.0
            out[(seq, cond)] = float(np.linalg.eigvalsh(acc)[0])
    return out


@dataclass
class CostateReport:
    stationarity_residual: float
    costate_residual: float


def costate_check(tables, model):
    """Exhaustive verification of the optimality system on the path tree.

    Builds the costate backward along every mode path (lambda_N = H x(N+1),
    lambda_{k-1} = Q x(k) + E[A' lambda_k | path prefix]) under the computed
    law, and reports
      * the largest stationarity residual of
        R u(k-d) + E[theta_k B' lambda_k | prefix through k-d-1], k = d..N;
      * the largest deviation of the enumerated costate from its closed-form
        expression in the tables.
    Guarded to small instances (2^(N+1) paths).
    """
    N, d = tables.N, tables.d
    n, m = tables.n, tables.m
    if n > 2 or m > 2 or N > 10 or d > 3:
        raise TooLarge("costate check is an enumeration oracle: n,m <= 2, N <= 10, d <= 3")
    A, B, Q, R, H = model.A, model.B, model.Q, model.R, model.H
    xi = model.chain.xi
    pi0 = model.chain.initial_law()
    gains = finite_gain(tables)

    def u_hist(us, path, t):
        return model.init.u_at(t) if t < 0 else us[path[:t]]

    xs = {(): [model.init.x0]}
    us = {}
    prob = {(): 1.0}
    if N - d >= 0:
        K0, Kj = gains.at(0, None)
        u = -K0 @ xs[()][0]
        for j in range(1, d + 1):
            u = u - Kj[j] @ model.init.u_at(-d + j - 1)
        us[()] = u
    for L in range(1, N + 2):
        for path in product((0, 1), repeat=L):
            pre, th = path[:-1], path[-1]
            k = L - 1
            prob[path] = prob[pre] * (pi0[th] if L == 1 else xi[pre[-1], th])
            xn = A @ xs[pre][-1] + th * (B @ u_hist(us, pre, k - d))
            xs[path] = xs[pre] + [xn]
            t = L
            if 1 <= t <= N - d:
                K0, Kj = gains.at(t, th)
                u = -K0 @ xs[path][t]
                for j in range(1, d + 1):
                    u = u - Kj[j] @ u_hist(us, path, t - d + j - 1)
                us[path] = u

    lam = {}
    for path in product((0, 1), repeat=N + 1):
        lam[(N, path)] = H @ xs[path][N + 1]
    for k in range(N, 0, -1):
        for pre in product((0, 1), repeat=k):
            e = sum(xi[pre[-1], j] * lam[(k, pre + (j,))] for j in (0, 1))
            lam[(k - 1, pre)] = Q @ xs[pre][k] + A.T @ e

    worst_stat = 0.0
    for k in range(d, N + 1):
        groups = {}
        for path in product((0, 1), repeat=k + 1):
            g = path[:k - d]
            acc = groups.setdefault(g, [0.0, np.zeros(m)])
            acc[0] += prob[path]
            acc[1] = acc[1] + prob[path] * path[k] * (B.T @ lam[(k, path)])
        for g, (pt, acc) in groups.items():
            if pt == 0.0:
                continue
            resid = R @ us[g] + acc / pt
            worst_stat = max(worst_stat, float(np.max(np.abs(resid))))

    worst_cf = 0.0
    for k in range(d, N + 1):
        Fk = tables.F[k]
        for pre in product((0, 1), repeat=k):
            if prob[pre] == 0.0:
                continue
            val = tables.P[k][pre[k - 1]] @ xs[pre][k]
            for s in range(1, d + 1):
                lbl = k - s
                if tables.labels.is_pad(lbl):
                    continue
                cm = None if lbl == 0 else pre[lbl - 1]
                ginv = tables.ginv_at(lbl, cm)
                Ml = tables.M_at(lbl, cm)
                Fv = Fk[d - s + 1][tuple(pre[k - s:])]
                val = val - Fv.T @ ginv.solve(Ml[0] @ xs[pre][k - s])
            for s in range(0, d):
                uu = u_hist(us, pre, k - 2 * d + s)
                for i in range(d - s, d + 1):
                    lbl = k - i
                    if tables.labels.is_pad(lbl):
                        continue
                    cm = None if lbl == 0 else pre[lbl - 1]
                    ginv = tables.ginv_at(lbl, cm)
                    Ml = tables.M_at(lbl, cm)
                    Fv = Fk[d - i + 1][tuple(pre[k - i:])]
                    val = val - Fv.T @ ginv.solve(Ml[s + 1 - d + i] @ uu)
            worst_cf = max(worst_cf, float(np.max(np.abs(val - lam[(k - 1, pre)]))))
    return CostateReport(stationarity_residual=worst_stat, costate_residual=worst_cf)
