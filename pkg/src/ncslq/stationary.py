"""Infinite-horizon machinery: CAREs-M fixed point, stabilizability certificate,
stationary gains, the closed-loop second-moment operator, and infinite cost.
"""

from dataclasses import dataclass, field
from itertools import product

import numpy as np

from ._core import EPS_PD, GammaInv, LabelTables, a_powers, step_gamma_M
from .chain import chain_powers, dist_marginal
from .errors import NotConverged, NotStabilized
from .model import exact_observability

__all__ = ["StationarySolution", "StabilizabilityCertificate", "GainLaw",
           "MomentOperator", "solve_stationary", "stationary_residuals",
           "certify", "stationary_gain", "moment_operator", "infinite_cost",
           "closed_loop_matrices"]

DIVERGENCE_LIMIT = 1e12


@dataclass
class StationarySolution:
    """Mode-indexed fixed point of the coupled algebraic Riccati system."""

    P: np.ndarray            # (2, n, n)
    Gamma: np.ndarray        # (2, m, m)
    M: list                  # M[j]: (2, m, n) for j=0 else (2, m, m)
    S: list                  # S[j]: (2, n, m) holding (S^j)', j=1..d
    F: dict                  # {j: {mode tuple: (m, n)}}
    Gamma_init: np.ndarray
    M_init: list
    iterations: int
    final_increment: float
    converged: bool
    diverged: bool = False
    method: str = "value_iteration"
    _ginv: list = field(default=None, repr=False)
    _ginv_init: GammaInv = field(default=None, repr=False)


@dataclass
class StabilizabilityCertificate:
    """Positivity margins of P - sum F'Gamma^{-1}F over mode assignments.

    Keys are ((m_0, ..., m_{d-1}), m_{-1}); verdict is "stabilizable",
    "not_stabilizable", or "withheld" (observability test failed). A solver
    that diverged certifies non-stabilizability directly (the finite-horizon
    values grow without bound exactly when no stabilizing law exists), with
    no margins to report.
    """

    margins: dict
    verdict: str
    observability_ok: bool
    diverged: bool = False

    @property
    def stabilizable(self):
        return self.verdict == "stabilizable"


@dataclass
class GainLaw:
    """Stationary feedback u(t) = -K0[mode] x(t) - sum_j Kj[mode][j] u(t-d+j-1),
    with the gain selected by the mode at t-1 and an initial-distribution
    variant for the very first decision."""

    d: int
    K0: np.ndarray           # (2, m, n)
    Kj: list                 # Kj[j]: (2, m, m), j = 1..d (index 0 unused)
    K0_init: np.ndarray
    Kj_init: list


@dataclass
class MomentOperator:
    """Linear map propagating the pair of mode-conditioned second moments
    V_j <- sum_i xi_ij (Atil_j + Btil K_i) V_i (Atil_j + Btil K_i)'."""

    matrix: np.ndarray
    dim: int
    closed_loop: list        # closed_loop[j][i]

    @property
    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.matrix))))

    def apply(self, V0, V1):
        D = self.dim
        v = np.concatenate([V0.flatten("F"), V1.flatten("F")])
        w = self.matrix @ v
        return w[:D * D].reshape(D, D, order="F"), w[D * D:].reshape(D, D, order="F")


class _Window:
    """Rolling window of the last d decision labels during value iteration."""

    def __init__(self, R, d, n, m):
        pad_g = [GammaInv(R), GammaInv(R)]
        pad_M = [np.zeros((2, m, n))] + [np.zeros((2, m, m)) for _ in range(d)]
        self.entries = [(pad_g, pad_M) for _ in range(max(d, 1))]
        self.d = d

    def is_pad(self, label):
        return False

    def at(self, offset, mode):
        g, M = self.entries[offset - 1]
        return g[mode], [M[j][mode] for j in range(len(M))]

    def push(self, gammas, Ms):
        self.entries = [(gammas, Ms)] + self.entries[:-1]


class _WindowLabels:
    """Adapter presenting the rolling window through the label interface."""

    def __init__(self, window, t):
        self.window = window
        self.t = t

    def is_pad(self, label):
        return False

    def at(self, label, mode):
        return self.window.at(label - self.t, mode)


def _stationary_F(A, B, d, xi, P, Gamma_inv, M, S):
    """Path-indexed stationary F^j from the converged tables."""
    xp = chain_powers(xi, d + 2)
    F = {}
    for j in range(d, 0, -1):
        F[j] = {}
        for ms in product((0, 1), repeat=d - j + 1):
            acc = S[j][ms[-1]].copy()
            for s in range(1, d - j + 1):
                cm = ms[-s - 1]
                Fk = F[d - s + 1][ms[-s:]]
                acc = acc - Fk.T @ Gamma_inv[cm].solve(M[j + s][cm])
            F[j][ms] = acc.T
    return F


def solve_stationary(model, tol=1e-11, max_iter=200000):
    """Value-iterate the finite-horizon sweep with zero terminal weight until
    every stationary field stops moving; divergence past 1e12 is reported as
    converged=False / diverged=True (the non-stabilizability signal), not an
    error."""
    A, B, Q, R, d = model.A, model.B, model.Q, model.R, model.d
    xi = model.chain.xi
    n, m = model.n, model.m
    xp = chain_powers(xi, d + 2)
    Apow = a_powers(A, d + 1)

    window = _Window(R, d, n, m)
    P = np.zeros((2, n, n))
    S = [None] + [np.zeros((2, n, m)) for _ in range(d)]
    inc = np.inf
    it = 0
    diverged = False
    for it in range(1, max_iter + 1):
        labels = _WindowLabels(window, 0)
        gammas = []
        Ms = [np.empty((2, m, n))] + [np.empty((2, m, m)) for _ in range(d)]
        for mode in (0, 1):
            G_, Ms_ = step_gamma_M(A, B, Q, R, d, xp, Apow, P, labels, 0,
                                   xi[mode], step=it, mode=mode)
            gammas.append(GammaInv(G_, step=it, mode=mode))
            for j in range(d + 1):
                Ms[j][mode] = Ms_[j]
        if d >= 1:
            gam_k, M_k = window.entries[d - 1]
        else:
            gam_k, M_k = gammas, Ms
        Pn = np.empty_like(P)
        for mode in (0, 1):
            acc = Q + sum(xi[mode, b] * A.T @ P[b] @ A for b in (0, 1))
            acc = acc - M_k[0][mode].T @ gam_k[mode].solve(M_k[0][mode])
            Pn[mode] = (acc + acc.T) / 2.0
        Sn = [None] + [np.empty((2, n, m)) for _ in range(d)]
        for mode in (0, 1):
            if d >= 1:
                Sn[1][mode] = (xi[mode, 1] * A.T @ P[1] @ B
                               - M_k[0][mode].T @ gam_k[mode].solve(M_k[1][mode]))
            for j in range(2, d + 1):
                acc = sum(xi[mode, b] * A.T @ S[j - 1][b] for b in (0, 1))
                Sn[j][mode] = acc - M_k[0][mode].T @ gam_k[mode].solve(M_k[j][mode])

        incs = [np.max(np.abs(Pn - P))]
        prev_g, prev_M = window.entries[0]
        incs.append(max(np.max(np.abs(gammas[mode].mat - prev_g[mode].mat)) for mode in (0, 1)))
        for j in range(d + 1):
            incs.append(np.max(np.abs(Ms[j] - prev_M[j])))
        for j in range(1, d + 1):
            incs.append(np.max(np.abs(Sn[j] - S[j])))
        inc = float(max(incs))

        P, S = Pn, Sn
        window.push(gammas, Ms)
        scale = max(np.max(np.abs(P)), max(np.max(np.abs(g.mat)) for g in gammas))
        if not np.isfinite(inc) or scale > DIVERGENCE_LIMIT:
            diverged = True
            break
        if inc < tol:
            break

    gammas, Ms = window.entries[0]
    converged = (not diverged) and inc < tol
    if converged:
        labels = _WindowLabels(window, 0)
        pi0 = model.chain.initial_law()
        G_init, M_init = step_gamma_M(A, B, Q, R, d, xp, Apow, P, labels, 0, pi0)
        F = _stationary_F(A, B, d, xi, P, gammas, [Ms[j] for j in range(d + 1)], S)
        return StationarySolution(
            P=P, Gamma=np.stack([g.mat for g in gammas]), M=Ms, S=S, F=F,
            Gamma_init=G_init, M_init=M_init, iterations=it, final_increment=inc,
            converged=True, diverged=False, _ginv=gammas, _ginv_init=GammaInv(G_init))
    return StationarySolution(
        P=P, Gamma=np.stack([g.mat for g in gammas]), M=Ms, S=S, F={},
        Gamma_init=None, M_init=None, iterations=it, final_increment=inc,
        converged=False, diverged=diverged, _ginv=gammas)


def stationary_residuals(sol, model):
    """Max absolute residual of each stationary equation at the solution."""
    if not sol.converged:
        raise NotConverged("stationary solution did not converge")
    A, B, Q, R, d = model.A, model.B, model.Q, model.R, model.d
    xi = model.chain.xi
    xp = chain_powers(xi, d + 2)
    Apow = a_powers(A, d + 1)

    class _Fixed:
        def is_pad(self, label):
            return False

        def at(self, label, mode):
            return sol._ginv[mode], [sol.M[j][mode] for j in range(d + 1)]

    labels = _Fixed()
    res = {"P": 0.0, "Gamma": 0.0}
    for j in range(d + 1):
        res[f"M{j}"] = 0.0
    for j in range(1, d + 1):
        res[f"S{j}"] = 0.0
    for mode in (0, 1):
        G_, Ms_ = step_gamma_M(A, B, Q, R, d, xp, Apow, sol.P, labels, 0, xi[mode])
        res["Gamma"] = max(res["Gamma"], float(np.max(np.abs(G_ - sol.Gamma[mode]))))
        for j in range(d + 1):
            res[f"M{j}"] = max(res[f"M{j}"], float(np.max(np.abs(Ms_[j] - sol.M[j][mode]))))
        acc = Q + sum(xi[mode, b] * A.T @ sol.P[b] @ A for b in (0, 1))
        acc = acc - sol.M[0][mode].T @ sol._ginv[mode].solve(sol.M[0][mode])
        res["P"] = max(res["P"], float(np.max(np.abs(acc - sol.P[mode]))))
        if d >= 1:
            s1 = (xi[mode, 1] * A.T @ sol.P[1] @ B
                  - sol.M[0][mode].T @ sol._ginv[mode].solve(sol.M[1][mode]))
            res["S1"] = max(res["S1"], float(np.max(np.abs(s1 - sol.S[1][mode]))))
        for j in range(2, d + 1):
            acc = sum(xi[mode, b] * A.T @ sol.S[j - 1][b] for b in (0, 1))
            acc = acc - sol.M[0][mode].T @ sol._ginv[mode].solve(sol.M[j][mode])
            res[f"S{j}"] = max(res[f"S{j}"], float(np.max(np.abs(acc - sol.S[j][mode]))))
    return res


def certify(sol, model):
    """Stabilizability certificate from the stationary solution.

    With a converged solution, evaluates the positivity margins of
    P - sum_s F'Gamma^{-1}F over every mode assignment (m_{-1}, m_0, ...,
    m_{d-1}); the verdict is positive iff all margins exceed the PD
    threshold and (A, Q^{1/2}) is exactly observable. A diverged solve is
    itself the non-stabilizability verdict (no margins available).
    """
    obs = exact_observability(model.A, model.Q)
    if sol.diverged:
        return StabilizabilityCertificate(
            margins={}, verdict="not_stabilizable" if obs else "withheld",
            observability_ok=obs, diverged=True)
    if not sol.converged:
        raise NotConverged("stationary solution did not converge")
    d = model.d
    margins = {}
    if d == 0:
        for mode in (0, 1):
            margins[((), mode)] = float(np.linalg.eigvalsh(sol.P[mode])[0])
    else:
        for seq in product((0, 1), repeat=d):
            for cond in (0, 1):
                modes = (cond,) + seq
                acc = sol.P[seq[-1]].copy()
                for s in range(0, d):
                    Fv = sol.F[s + 1][seq[s:]]
                    acc = acc - Fv.T @ sol._ginv[modes[s]].solve(Fv)
                acc = (acc + acc.T) / 2.0
                margins[(seq, cond)] = float(np.linalg.eigvalsh(acc)[0])
    if not obs:
        verdict = "withheld"
    elif all(v > EPS_PD for v in margins.values()):
        verdict = "stabilizable"
    else:
        verdict = "not_stabilizable"
    return StabilizabilityCertificate(margins=margins, verdict=verdict,
                                      observability_ok=obs, diverged=False)


def stationary_gain(sol):
    """K0 = Gamma^{-1} M^0, Kj = Gamma^{-1} M^j per mode, plus the
    initial-distribution gain for the time-0 decision."""
    if not sol.converged:
        raise NotConverged("stationary solution did not converge")
    d = len(sol.M) - 1
    K0 = np.stack([sol._ginv[mode].solve(sol.M[0][mode]) for mode in (0, 1)])
    Kj = [None] + [np.stack([sol._ginv[mode].solve(sol.M[j][mode]) for mode in (0, 1)])
                   for j in range(1, d + 1)]
    K0_init = sol._ginv_init.solve(sol.M_init[0])
    Kj_init = [None] + [sol._ginv_init.solve(sol.M_init[j]) for j in range(1, d + 1)]
    return GainLaw(d=d, K0=K0, Kj=Kj, K0_init=K0_init, Kj_init=Kj_init)


def augmented_blocks(model):
    """Delay-line stacking of the plant: Atil[mode], Btil, Qtil, and the
    extractor of the cost-bearing input slot u(k-d)."""
    A, B, d = model.A, model.B, model.d
    n, m = model.n, model.m
    if d == 0:
        Atil = [A.copy(), A.copy()]
        Btil = B.copy()
        Qtil = model.Q.copy()
        extract = None
        return Atil, Btil, Qtil, extract, n
    dim = n + d * m
    Atil = []
    for j in (0, 1):
        M = np.zeros((dim, dim))
        M[:n, :n] = A
        for i in range(2, d + 1):
            r, c = n + (i - 1) * m, n + (i - 2) * m
            M[r:r + m, c:c + m] = np.eye(m)
        M[:n, n + (d - 1) * m:] = j * B
        Atil.append(M)
    Btil = np.zeros((dim, m))
    Btil[n:n + m, :] = np.eye(m)
    Qtil = np.zeros((dim, dim))
    Qtil[:n, :n] = model.Q
    extract = np.zeros((m, dim))
    extract[:, n + (d - 1) * m:] = np.eye(m)
    return Atil, Btil, Qtil, extract, dim


def closed_loop_matrices(model, law):
    """C[j][i] with z(k+1) = C[theta_k][theta_{k-1}] z(k) under the law.

    For d >= 1 the control enters the delay line ungated and the delivery
    gate sits inside Atil; for d = 0 the gate multiplies the control
    directly.
    """
    d = model.d
    Atil, Btil, _, _, dim = augmented_blocks(model)
    C = [[None, None], [None, None]]
    for j in (0, 1):
        for i in (0, 1):
            if d == 0:
                C[j][i] = model.A - j * (model.B @ law.K0[i])
            else:
                Krow = np.hstack([law.K0[i]] + [law.Kj[d - c][i] for c in range(d)])
                C[j][i] = Atil[j] - Btil @ Krow
    return C, dim


def moment_operator(model, law):
    """Matrix representation of the closed-loop second-moment recursion on
    the pair (V_0, V_1) of delayed-mode-conditioned moments."""
    xi = model.chain.xi
    C, dim = closed_loop_matrices(model, law)
    D2 = dim * dim
    T = np.zeros((2 * D2, 2 * D2))
    for j in (0, 1):
        for i in (0, 1):
            T[j * D2:(j + 1) * D2, i * D2:(i + 1) * D2] = xi[i, j] * np.kron(C[j][i], C[j][i])
    return MomentOperator(matrix=T, dim=dim, closed_loop=C)


def _prefix_value(sol, model):
    """Stationary-table evaluation of the optimal infinite cost from the
    initial data: sum_{k<d} E[x'Qx] plus E[x(d)' lambda-decomposition]."""
    A, B, Q, d = model.A, model.B, model.Q, model.d
    xi = model.chain.xi
    pi0 = model.chain.initial_law()
    if d == 0:
        acc = Q + sum(pi0[b] * A.T @ sol.P[b] @ A for b in (0, 1))
        acc = acc - sol.M_init[0].T @ sol._ginv_init.solve(sol.M_init[0])
        x0 = model.init.x0
        return float(x0 @ acc @ x0)

    def gm(cond):
        if cond is None:
            return sol._ginv_init, sol.M_init
        return sol._ginv[cond], [sol.M[j][cond] for j in range(d + 1)]

    total = 0.0
    for pre in product((0, 1), repeat=d):
        w = 1.0
        for k, th in enumerate(pre):
            w *= pi0[th] if k == 0 else xi[pre[k - 1], th]
        if w == 0.0:
            continue
        xs = [model.init.x0]
        for k in range(d):
            xs.append(A @ xs[-1] + pre[k] * (B @ model.init.u_at(k - d)))
        xd = xs[d]
        val = sum(xs[k] @ Q @ xs[k] for k in range(d))
        val += xd @ sol.P[pre[d - 1]] @ xd
        for s in range(1, d + 1):
            lbl = d - s
            cm = None if lbl == 0 else pre[lbl - 1]
            ginv, Ml = gm(cm)
            Fv = sol.F[d - s + 1][tuple(pre[d - s:])]
            val -= xd @ Fv.T @ ginv.solve(Ml[0] @ xs[d - s])
        for s in range(0, d):
            uu = model.init.u_at(s - d)
            for i in range(d - s, d + 1):
                lbl = d - i
                cm = None if lbl == 0 else pre[lbl - 1]
                ginv, Ml = gm(cm)
                Fv = sol.F[d - i + 1][tuple(pre[d - i:])]
                val -= xd @ Fv.T @ ginv.solve(Ml[s + 1 - d + i] @ uu)
        total += w * val
    return float(total)


def infinite_cost(sol, model, tol=1e-12, max_terms=1000000, require_certificate=True):
    """Optimal infinite-horizon cost under the stationary law.

    Primary method "moment_sum" propagates the exact closed-loop second
    moments and accumulates tr(C V) until the increment drops below tol;
    secondary method "closed_form" evaluates the stationary cost
    decomposition on the d-step prefix. Both use the convention that the
    pre-horizon control history carries no cost (the finite-horizon
    objective's limit). Returns {"moment_sum": .., "closed_form": ..,
    "spectral_radius": ..}.
    """
    if not sol.converged:
        raise NotConverged("stationary solution did not converge")
    cert = certify(sol, model)
    if require_certificate and not cert.stabilizable:
        raise NotStabilized("certificate is not positive; infinite cost undefined")
    law = stationary_gain(sol)
    op = moment_operator(model, law)
    rho = op.spectral_radius
    if rho >= 1.0:
        raise NotStabilized(f"closed-loop spectral radius {rho:.6f} >= 1")

    d = model.d
    Atil, Btil, Qtil, extract, dim = augmented_blocks(model)
    Q, R = model.Q, model.R
    pi0 = model.chain.initial_law()
    if d >= 1:
        z0 = np.concatenate([model.init.x0] + [model.init.u_at(-1 - c) for c in range(d)])
        u0 = -law.K0_init @ model.init.x0
        for j in range(1, d + 1):
            u0 = u0 - law.Kj_init[j] @ model.init.u_at(-d + j - 1)
    else:
        z0 = model.init.x0
        u0 = -law.K0_init @ model.init.x0

    # state cost at k=0; control cost starts at k=d
    total = float(z0[:model.n] @ Q @ z0[:model.n])
    if d == 0:
        total += float(u0 @ R @ u0)

    V = [np.zeros((dim, dim)), np.zeros((dim, dim))]
    for j in (0, 1):
        if d >= 1:
            z1 = Atil[j] @ z0 + Btil @ u0
        else:
            z1 = model.A @ z0 + j * (model.B @ u0)
        V[j] = pi0[j] * np.outer(z1, z1)

    C = op.closed_loop
    k = 1
    while k < max_terms:
        inc = 0.0
        for j in (0, 1):
            inc += float(np.trace(Qtil @ V[j]))
            if d >= 1:
                if k >= d:
                    inc += float(np.trace(extract.T @ R @ extract @ V[j]))
            else:
                Ki = law.K0[j]
                inc += float(np.trace(Ki.T @ R @ Ki @ V[j]))
        total += inc
        if inc < tol and k > d:
            break
        Vn = [sum(model.chain.xi[i, j] * C[j][i] @ V[i] @ C[j][i].T for i in (0, 1))
              for j in (0, 1)]
        V = Vn
        k += 1

    closed = _prefix_value(sol, model)
    return {"moment_sum": total, "closed_form": closed, "spectral_radius": rho}
