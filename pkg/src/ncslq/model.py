"""Problem data: plant, weights, channel, initial history, and validation."""

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BadDelay, BadInit, DimensionMismatch, NotPD, NotPSD, NotStochastic

EPS_PD = 1e-10          # relative eigenvalue threshold for PD/PSD tests
_ROW_SUM_TOL = 1e-12


@dataclass(frozen=True)
class MarkovChannel:
    """Two-state packet channel: mode 0 = dropped, mode 1 = delivered.

    xi[i, j] = P(theta_{k+1} = j | theta_k = i); q0 = P(theta_0 = 0).
    """

    xi: np.ndarray
    q0: float

    def initial_law(self):
        return np.array([self.q0, 1.0 - self.q0])


@dataclass(frozen=True)
class InitialData:
    """x0 plus the d-deep control history u(-1), ..., u(-d), most recent first.

    x_pre (x(-1), ..., x(-d)) is optional; only the closed-form infinite-horizon
    cost variant can use it.
    """

    x0: np.ndarray
    u_pre: tuple = ()
    x_pre: tuple = None

    def u_at(self, t):
        """u(t) for t in [-d, -1]."""
        return self.u_pre[-t - 1]


@dataclass(frozen=True)
class SystemModel:
    A: np.ndarray
    B: np.ndarray
    d: int
    Q: np.ndarray
    R: np.ndarray
    H: np.ndarray
    chain: MarkovChannel
    init: InitialData
    validated: bool = field(default=False, compare=False)

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def m(self):
        return self.B.shape[1]


def _sym(X):
    return (X + X.T) / 2.0


def _check_psd(X, name):
    w = np.linalg.eigvalsh(X)
    if w[0] < -EPS_PD * (1.0 + abs(w[-1])):
        raise NotPSD(name, w[0])


def _check_pd(X, name):
    w = np.linalg.eigvalsh(X)
    if w[0] <= EPS_PD * (1.0 + abs(w[-1])):
        raise NotPD(name, w[0])


def make_model(A, B, d, Q, R, H=None, xi=None, q0=0.5, x0=None, u_pre=None, x_pre=None):
    """Assemble and validate a SystemModel from raw arrays."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.atleast_2d(np.asarray(B, dtype=float))
    n = A.shape[0]
    m = B.shape[1]
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    H = np.zeros((n, n)) if H is None else np.atleast_2d(np.asarray(H, dtype=float))
    xi = np.asarray(xi if xi is not None else [[0.0, 1.0], [0.0, 1.0]], dtype=float)
    x0 = np.zeros(n) if x0 is None else np.asarray(x0, dtype=float).reshape(-1)
    u_pre = tuple(np.asarray(u, dtype=float).reshape(-1) for u in (u_pre or []))
    if x_pre is not None:
        x_pre = tuple(np.asarray(x, dtype=float).reshape(-1) for x in x_pre)
    model = SystemModel(A=A, B=B, d=int(d), Q=Q, R=R, H=H,
                        chain=MarkovChannel(xi=xi, q0=float(q0)),
                        init=InitialData(x0=x0, u_pre=u_pre, x_pre=x_pre))
    return validate_model(model)


def validate_model(model):
    """Enforce the standing assumptions; returns the model with symmetrized weights.

    Idempotent: re-validating a validated model reproduces it exactly.
    """
    A, B = model.A, model.B
    n = A.shape[0]
    if A.shape != (n, n):
        raise DimensionMismatch(f"A must be square, got {A.shape}")
    if B.ndim != 2 or B.shape[0] != n:
        raise DimensionMismatch(f"B must be {n}xm, got {B.shape}")
    m = B.shape[1]
    if model.d < 0:
        raise BadDelay(f"delay must be nonnegative, got {model.d}")
    for name, X, shape in (("Q", model.Q, (n, n)), ("R", model.R, (m, m)), ("H", model.H, (n, n))):
        if X.shape != shape:
            raise DimensionMismatch(f"{name} must be {shape}, got {X.shape}")
    Q, R, H = _sym(model.Q), _sym(model.R), _sym(model.H)
    _check_psd(Q, "Q")
    _check_psd(H, "H")
    _check_pd(R, "R")

    xi = model.chain.xi
    if xi.shape != (2, 2):
        raise DimensionMismatch(f"xi must be 2x2, got {xi.shape}")
    if np.any(xi < -1e-15) or np.any(xi > 1.0 + 1e-15):
        raise NotStochastic("xi entries must lie in [0, 1]")
    if np.any(np.abs(xi.sum(axis=1) - 1.0) > _ROW_SUM_TOL):
        raise NotStochastic("xi rows must sum to 1")
    if not 0.0 <= model.chain.q0 <= 1.0:
        raise NotStochastic(f"q0 must lie in [0, 1], got {model.chain.q0}")

    init = model.init
    if init.x0.shape != (n,):
        raise BadInit(f"x0 must have length {n}, got {init.x0.shape}")
    if len(init.u_pre) != model.d:
        raise BadInit(f"u_pre must hold exactly d={model.d} vectors, got {len(init.u_pre)}")
    for u in init.u_pre:
        if u.shape != (m,):
            raise BadInit(f"u_pre entries must have length {m}")
    if init.x_pre is not None:
        if len(init.x_pre) != model.d:
            raise BadInit(f"x_pre must hold exactly d={model.d} vectors when present")
        for x in init.x_pre:
            if x.shape != (n,):
                raise BadInit(f"x_pre entries must have length {n}")

    return replace(model, Q=Q, R=R, H=H, validated=True)


def sqrt_psd(Q):
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues below the PSD tolerance are clamped to zero; a genuinely
    negative spectrum raises NotPSD.
    """
    Q = _sym(np.atleast_2d(np.asarray(Q, dtype=float)))
    w, V = np.linalg.eigh(Q)
    if w[0] < -1e-8 * (1.0 + abs(w[-1])):
        raise NotPSD("Q", w[0])
    w = np.clip(w, 0.0, None)
    return _sym(V @ np.diag(np.sqrt(w)) @ V.T)


def exact_observability(A, Q):
    """Kalman rank test on (A, Q^{1/2}).

    The state map in the plant is deterministic, so the stochastic notion of
    exact observability coincides with this deterministic rank condition.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = A.shape[0]
    C = sqrt_psd(Q)
    blocks = []
    Ak = np.eye(n)
    for _ in range(n):
        blocks.append(C @ Ak)
        Ak = Ak @ A
    obs = np.vstack(blocks)
    sv = np.linalg.svd(obs, compute_uv=False)
    if sv.size == 0 or sv[0] == 0.0:
        return False
    rank = int(np.sum(sv > n * np.finfo(float).eps * sv[0]))
    return rank == n
