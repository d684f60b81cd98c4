"""Shared backward-sweep kernels used by the finite and stationary solvers.

Index conventions (fixed throughout the package):
  * Gamma and M^j carry a decision-time label t; the quantities at label t
    are conditioned on the mode at time t-1 (or on the initial distribution
    for t = 0).
  * P and the S^j cross terms carry the state time k and condition on the
    mode at k-1; the sweep step k produces label t = k - d together with
    P(k) and S(k).
  * Inside the label-t recursions, the referenced M^s/Gamma live at label
    t + (d - s + 1); labels beyond N - d are the terminal pad (M = 0,
    Gamma = R).
  * F^j is anchored at a state time k and indexed by the mode path
    (theta_{k-d+j-1}, ..., theta_{k-1}); no averaging over those modes.
"""

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .chain import dist_joint, dist_marginal
from .errors import SingularGamma

EPS_PD = 1e-10
OVERFLOW_LIMIT = 1e300


def a_powers(A, up_to):
    out = [np.eye(A.shape[0])]
    for _ in range(up_to):
        out.append(out[-1] @ A)
    return out


class GammaInv:
    """Positive-definite Gamma with a cached Cholesky solve."""

    def __init__(self, G, step=None, mode=None):
        G = (G + G.T) / 2.0
        w = np.linalg.eigvalsh(G)
        if w[0] <= EPS_PD * (1.0 + np.trace(G)):
            raise SingularGamma(step, mode, w[0])
        self.mat = G
        self._cf = cho_factor(G, lower=True)
        self.min_eig = w[0]

    def solve(self, X):
        return cho_solve(self._cf, X)


class LabelTables:
    """Gamma/M lookup at a decision label with terminal zero-padding."""

    def __init__(self, R, d, n, m):
        self._pad_gamma = [GammaInv(R), GammaInv(R)]
        self._pad_M = [np.zeros((m, n))] + [np.zeros((m, m)) for _ in range(d)]
        self.gamma = {}   # label -> [GammaInv, GammaInv]
        self.M = {}       # label -> list over j of [arr mode0, arr mode1]
        self.max_real = None  # labels above this are padded

    def store(self, label, gammas, Ms):
        self.gamma[label] = gammas
        self.M[label] = Ms

    def is_pad(self, label):
        return label > self.max_real

    def at(self, label, mode):
        """(GammaInv, [M^0..M^d]) at a label for one conditioning mode."""
        if self.is_pad(label):
            return self._pad_gamma[mode], self._pad_M
        return self.gamma[label][mode], [self.M[label][j][mode] for j in range(len(self._pad_M))]


def step_gamma_M(A, B, Q, R, d, xp, Apow, P_next, labels, t, rho, step=None, mode=None):
    """Gamma and M^0..M^d at decision label t for first-step law rho.

    rho is the law of the mode at time t (one step after the conditioning
    instant): a transition-matrix row for mode conditioning, or the initial
    distribution for the label-0 variant. P_next holds P at state time
    t + d + 1; cross references resolve through `labels`.
    """
    n, m = B.shape
    BP1 = B.T @ P_next[1]
    w_end = dist_marginal(rho, xp, d + 1)[1]
    G = R + w_end * (BP1 @ B)
    M0 = w_end * (BP1 @ Apow[d + 1])
    for o in range(1, d + 1):          # chain offset == label offset
        s = d + 1 - o                  # superscript of the referenced M
        mg = dist_marginal(rho, xp, o)
        for a in (0, 1):
            Gref, Mref = labels.at(t + o, a)
            giv_s = Gref.solve(Mref[s])
            giv_0 = Gref.solve(Mref[0])
            G = G - mg[a] * (Mref[s].T @ giv_s)
            M0 = M0 - mg[a] * (Mref[s].T @ giv_0) @ Apow[o]
    Ms = [M0]
    for j in range(1, d + 1):
        pj = dist_joint(rho, xp, j, d + 1)
        Mj = pj[1, 1] * (BP1 @ Apow[d + 1 - j] @ B)
        for s in range(d - j + 2, d + 1):       # overlap with later decisions
            o = d + 1 - s
            mg = dist_marginal(rho, xp, o)
            for a in (0, 1):
                Gref, Mref = labels.at(t + o, a)
                Mj = Mj - mg[a] * (Mref[s].T @ Gref.solve(Mref[s - d + j - 1]))
        for s in range(1, d + 2 - j):           # delivery-gated state coupling
            o = d + 1 - s
            if o == j:
                mg = dist_marginal(rho, xp, o)
                Gref, Mref = labels.at(t + o, 1)
                g1 = Mref[s].T @ Gref.solve(Mref[0])
                Mj = Mj - mg[1] * g1 @ Apow[o - j] @ B
            else:
                pj2 = dist_joint(rho, xp, j, o)
                for b in (0, 1):
                    Gref, Mref = labels.at(t + o, b)
                    g = Mref[s].T @ Gref.solve(Mref[0])
                    Mj = Mj - pj2[1, b] * g @ Apow[o - j] @ B
        Ms.append(Mj)
    return (G + G.T) / 2.0, Ms


def step_P(A, Q, xi, P_next, labels, k):
    """P at state time k (both modes) from P(k+1) and the label-k tables."""
    out = np.empty_like(P_next)
    for mode in (0, 1):
        gamma_k, Ms_k = labels.at(k, mode)
        acc = Q + sum(xi[mode, b] * A.T @ P_next[b] @ A for b in (0, 1))
        acc = acc - Ms_k[0].T @ gamma_k.solve(Ms_k[0])
        out[mode] = (acc + acc.T) / 2.0
    return out


def step_S(A, B, d, xi, P_next, S_next, labels, k):
    """(S^1..S^d)' at state time k, both modes; None where the horizon
    truncates the chain (S^j needs S^{j-1} one step later)."""
    n, m = B.shape
    out = [None] * (d + 1)
    if d >= 1:
        s1 = np.empty((2, n, m))
        for mode in (0, 1):
            gamma_k, Ms_k = labels.at(k, mode)
            s1[mode] = xi[mode, 1] * A.T @ P_next[1] @ B - Ms_k[0].T @ gamma_k.solve(Ms_k[1])
        out[1] = s1
    for j in range(2, d + 1):
        if S_next[j - 1] is None:
            break
        sj = np.empty((2, n, m))
        for mode in (0, 1):
            gamma_k, Ms_k = labels.at(k, mode)
            acc = sum(xi[mode, b] * A.T @ S_next[j - 1][b] for b in (0, 1))
            sj[mode] = acc - Ms_k[0].T @ gamma_k.solve(Ms_k[j])
        out[j] = sj
    return out


def path_F_at(d, ST_k, labels, k, mode_paths=None):
    """F^j anchored at state time k, indexed by the mode path
    (theta_{k-d+j-1}, ..., theta_{k-1}).

    ST_k[j][mode] holds (S^j)' at step k (None where undefined). Terms whose
    Gamma/M label falls in the terminal pad vanish exactly (padded M = 0)
    and are skipped, which keeps every reachable entry well defined.
    Returns {j: {mode_tuple: (m x n) array}}.
    """
    from itertools import product as _product

    F = {}
    for j in range(d, 0, -1):
        if ST_k[j] is None:
            continue
        F[j] = {}
        for ms in _product((0, 1), repeat=d - j + 1):
            acc = ST_k[j][ms[-1]].copy()
            for s in range(1, d - j + 1):
                lbl = k - s
                if labels.is_pad(lbl):
                    continue
                cm = ms[-s - 1]
                Gref, Mref = labels.at(lbl, cm)
                Fk = F[d - s + 1][ms[-s:]]
                acc = acc - Fk.T @ Gref.solve(Mref[j + s])
            F[j][ms] = acc.T
    return F
