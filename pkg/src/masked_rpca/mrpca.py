"""Masked RPCA: linearized ADMM for the overlaying model with an l1 mask penalty.

Solves::

    minimize  ||L||_* + lambda_w ||W||_1
    s.t.      (1 - W) o (X - L) = 0,   W in [0, 1]

Each iteration takes a linearized proximal step in L (singular value
thresholding), a linearized proximal step in W (soft-threshold then clip)
and a dual ascent step on U_x.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from .exceptions import DimensionMismatchError, InvalidInputError
from .prox import project_unit_interval, soft_threshold, svt
from .trace import MRPCA_COLUMNS, IterationTrace


@dataclass(frozen=True)
class MrpcaConfig:
    lambda_w: float = 1e-3
    rho_x: float = 1.0
    tau_L: float = 0.5
    tau_W: float = 0.5
    max_iters: int = 500
    tol_gap: float = 1e-4
    tol_change: float = 1e-4

    def __post_init__(self):
        for name in ("lambda_w", "rho_x", "tau_L", "tau_W", "tol_gap", "tol_change"):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        for name in ("tau_L", "tau_W"):
            if getattr(self, name) > 1:
                raise InvalidInputError(f"{name} must lie in (0, 1]")
        if int(self.max_iters) < 1:
            raise InvalidInputError("max_iters must be at least 1")


@dataclass
class MrpcaState:
    L: np.ndarray
    W: np.ndarray
    U_x: np.ndarray
    iter: int = 0

    def copy(self):
        return MrpcaState(self.L.copy(), self.W.copy(), self.U_x.copy(), self.iter)


@dataclass
class MrpcaResult:
    L: np.ndarray
    W: np.ndarray
    U_x: np.ndarray
    trace: IterationTrace
    converged: bool
    n_iter: int
    config: MrpcaConfig = field(repr=False, default=None)


def median_init(X):
    """Per-pixel temporal median broadcast over all frames."""
    med = np.median(X, axis=1, keepdims=True)
    return np.repeat(med, X.shape[1], axis=1)


def lambda_L(state, X, rho_x):
    """Gradient (divided by rho_x) of the coupled quadratic w.r.t. L."""
    keep = 1.0 - state.W
    return keep * ((state.L - X) * keep + state.U_x / rho_x)


def lambda_W(state, X, rho_x, L_new=None):
    """Gradient (divided by rho_x) of the coupled quadratic w.r.t. W at the fresh L."""
    L = state.L if L_new is None else L_new
    return (X - L) * ((L - X) * (1.0 - state.W) + state.U_x / rho_x)


def update_L(state, X, cfg):
    step = state.L - cfg.tau_L * lambda_L(state, X, cfg.rho_x)
    return svt(step, cfg.tau_L / cfg.rho_x)


def update_W(state, X, cfg, L_new=None):
    step = state.W - cfg.tau_W * lambda_W(state, X, cfg.rho_x, L_new)
    return project_unit_interval(soft_threshold(step, cfg.lambda_w * cfg.tau_W / cfg.rho_x))


def update_dual(state, X, rho_x):
    return state.U_x + rho_x * ((1.0 - state.W) * (state.L - X))


def nuclear_norm(A):
    return float(np.sum(np.linalg.svd(A, compute_uv=False)))


def objective(L, W, lambda_w):
    return nuclear_norm(L) + lambda_w * float(np.abs(W).sum())


def lagrangian(L, W, U_x, X, cfg, nuc=None):
    """Augmented Lagrangian; the box indicator contributes zero for feasible W."""
    if np.any(W < 0) or np.any(W > 1):
        return np.inf
    r = (1.0 - W) * (L - X)
    if nuc is None:
        nuc = nuclear_norm(L)
    return (
        nuc
        + cfg.lambda_w * float(np.abs(W).sum())
        + float(np.vdot(U_x, r))
        + 0.5 * cfg.rho_x * float(np.vdot(r, r))
    )


def _check_data(X):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DimensionMismatchError(f"X must be an (m*n, k) matrix, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("X contains non-finite values")
    return X


def step(state, X, cfg):
    """One full iteration; returns the new state (inputs are not mutated)."""
    L = update_L(state, X, cfg)
    W = update_W(state, X, cfg, L_new=L)
    U = update_dual(MrpcaState(L, W, state.U_x), X, cfg.rho_x)
    return MrpcaState(L, W, U, state.iter + 1)


def solve_mrpca(X, cfg=None, callback=None, init=None):
    """Run the masked-RPCA iteration on an ``(m*n, k)`` matrix.

    ``callback(prev_state, new_state)`` is invoked after every iteration, which
    is how runtime invariant checks hook in. ``init`` optionally overrides the
    starting state (median background, empty mask, zero dual).
    """
    cfg = cfg or MrpcaConfig()
    X = _check_data(X)
    xnorm = max(np.linalg.norm(X), np.finfo(float).tiny)
    if init is None:
        state = MrpcaState(median_init(X), np.zeros_like(X), np.zeros_like(X))
    else:
        state = init.copy()

    trace = IterationTrace(MRPCA_COLUMNS)
    converged = False
    for _ in range(int(cfg.max_iters)):
        new = step(state, X, cfg)
        if callback is not None:
            callback(state, new)
        gap = float(np.linalg.norm((1.0 - new.W) * (X - new.L)))
        dL = float(np.linalg.norm(new.L - state.L))
        dW = float(np.linalg.norm(new.W - state.W))
        dU = float(np.linalg.norm(new.U_x - state.U_x))
        nuc = nuclear_norm(new.L)
        trace.append(
            iter=new.iter,
            objective=nuc + cfg.lambda_w * float(np.abs(new.W).sum()),
            gap=gap,
            rel_gap=gap / xnorm,
            dL=dL,
            dW=dW,
            dU=dU,
            lagrangian=lagrangian(new.L, new.W, new.U_x, X, cfg, nuc=nuc),
        )
        state = new
        if gap / xnorm < cfg.tol_gap and max(dL, dW) / xnorm < cfg.tol_change:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"masked RPCA did not converge in {cfg.max_iters} iterations",
            ConvergenceWarning,
            stacklevel=2,
        )
    return MrpcaResult(state.L, state.W, state.U_x, trace, converged, state.iter, cfg)
