"""Two-state Markov chain machinery.

Everything the solvers need from the channel: s-step transition powers,
joint two-time-point laws, exhaustive path enumeration (test oracle only),
and reproducible path sampling for Monte Carlo.
"""

from dataclasses import dataclass
from itertools import product

import numpy as np

from .errors import BadOffsets, TooLong

_MAX_ENUM = 25  # 2^L enumeration guard


def n_step_matrix(xi, s):
    """s-step transition matrix xi^s (identity for s=0)."""
    if s < 0:
        raise BadOffsets("negative step count")
    return np.linalg.matrix_power(np.asarray(xi, dtype=float), s)


def chain_powers(xi, s_max):
    """[xi^0, ..., xi^s_max] precomputed for weight lookups."""
    xi = np.asarray(xi, dtype=float)
    out = [np.eye(2)]
    for _ in range(s_max):
        out.append(out[-1] @ xi)
    return out


@dataclass(frozen=True)
class TwoTimeLaw:
    """Joint law of two chain values at offsets (s, t) from a conditioning point.

    table[a, b] = P(theta_{tau+s} = a, theta_{tau+t} = b | theta_tau = cond_mode).
    """

    cond_mode: int
    offsets: tuple
    table: np.ndarray

    def expect(self, f):
        """E[f(theta_{tau+s}, theta_{tau+t})] under the joint table."""
        return sum(self.table[a, b] * f(a, b) for a in (0, 1) for b in (0, 1))

    def marginal_first(self):
        return self.table.sum(axis=1)

    def marginal_second(self):
        return self.table.sum(axis=0)


def two_time_law(xi, cond_mode, s, t):
    """Joint law of (theta_{tau+s}, theta_{tau+t}) given theta_tau = cond_mode, 0 <= s <= t."""
    if not 0 <= s <= t:
        raise BadOffsets(f"offsets must satisfy 0 <= s <= t, got ({s}, {t})")
    xi = np.asarray(xi, dtype=float)
    m1 = n_step_matrix(xi, s)[cond_mode]
    step = n_step_matrix(xi, t - s)
    table = m1[:, None] * step
    return TwoTimeLaw(cond_mode=cond_mode, offsets=(s, t), table=table)


def dist_marginal(rho, xi_pows, off):
    """Law of the chain value at offset `off` >= 1 when the offset-1 value has law rho."""
    return np.asarray(rho) @ xi_pows[off - 1]


def dist_joint(rho, xi_pows, o1, o2):
    """Joint law at offsets (o1, o2), 1 <= o1 <= o2, first-step law rho.

    p[a, b] = P(value at o1 = a, value at o2 = b).
    """
    if not 1 <= o1 <= o2:
        raise BadOffsets(f"offsets must satisfy 1 <= o1 <= o2, got ({o1}, {o2})")
    m1 = dist_marginal(rho, xi_pows, o1)
    return m1[:, None] * xi_pows[o2 - o1]


def enumerate_paths(xi, start, length):
    """All mode sequences of the given length with their probabilities.

    `start` is either a fixed mode (int) or an initial drop probability q0
    (float), in which case the first element of each path is drawn from
    (q0, 1 - q0). Exhaustive: 2^length entries. Test oracle only.
    """
    if length > _MAX_ENUM:
        raise TooLong(f"path enumeration limited to length {_MAX_ENUM}")
    xi = np.asarray(xi, dtype=float)
    if isinstance(start, (int, np.integer)):
        first = None
        prev0 = int(start)
    else:
        first = np.array([float(start), 1.0 - float(start)])
        prev0 = None
    out = []
    for seq in product((0, 1), repeat=length):
        p = 1.0
        prev = prev0
        for k, th in enumerate(seq):
            if k == 0 and first is not None:
                p *= first[th]
            else:
                p *= xi[prev, th]
            prev = th
        out.append((seq, p))
    return out


def path_probability(xi, q0, seq):
    """Probability of a full mode sequence theta_0..theta_{L-1}."""
    xi = np.asarray(xi, dtype=float)
    p = q0 if seq[0] == 0 else 1.0 - q0
    for a, b in zip(seq[:-1], seq[1:]):
        p *= xi[a, b]
    return p


def stationary_distribution(xi):
    """Stationary law pi with pi = pi @ xi."""
    xi = np.asarray(xi, dtype=float)
    # 2x2 closed form; degenerate chains fall back to the dominant left eigvec
    denom = xi[0, 1] + xi[1, 0]
    if denom > 1e-14:
        pi0 = xi[1, 0] / denom
        return np.array([pi0, 1.0 - pi0])
    return np.array([0.5, 0.5])


def trajectory_rng(master_seed, stream_id):
    """Independent per-stream generator keyed by (master_seed, stream_id)."""
    return np.random.default_rng([int(master_seed), int(stream_id)])


def sample_path(xi, q0, length, seed, stream_id=0):
    """One mode path theta_0..theta_{length-1}; bit-reproducible per (seed, stream_id)."""
    xi = np.asarray(xi, dtype=float)
    rng = trajectory_rng(seed, stream_id)
    u = rng.random(length)
    out = np.empty(length, dtype=np.int64)
    if length == 0:
        return out
    out[0] = 0 if u[0] < q0 else 1
    for k in range(1, length):
        out[k] = 0 if u[k] < xi[out[k - 1], 0] else 1
    return out


def sample_paths(xi, q0, length, n_paths, master_seed):
    """Mode paths for n_paths independent streams, stacked (n_paths, length)."""
    out = np.empty((n_paths, length), dtype=np.int64)
    for i in range(n_paths):
        out[i] = sample_path(xi, q0, length, master_seed, stream_id=i)
    return out
