"""Extended masked RPCA: TV-regularized mask plus a sparse background perturbation.

Solves::

    minimize  ||L||_* + lambda_w ||W||_F^2 + lambda_z sum|Z| + lambda_e ||E||_1
    s.t.      (1 - W) o (L - X) + E = 0
              D(W) = Z,   W in [0, 1]

where ``D`` is the periodic 3D forward-difference operator applied to the
volume view of ``W`` and ``sum|Z|`` is the isotropic (per-voxel Euclidean)
group norm. Updates run in the order L, W, Z, E, duals.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from .exceptions import DimensionMismatchError, InvalidInputError
from .mrpca import median_init, nuclear_norm
from .prox import (
    grad3d,
    grad3d_adjoint,
    project_unit_interval,
    shrink_isotropic,
    soft_threshold,
    solve_screened_poisson,
    svt,
    to_matrix,
    to_volume,
)
from .trace import EMRPCA_COLUMNS, IterationTrace


@dataclass(frozen=True)
class EmrpcaConfig:
    lambda_w: float = 1e-2
    lambda_z: float = 3e-3
    lambda_e: float = 2.4e-2
    rho_x: float = 0.05
    rho_z: float = 0.5
    tau_L: float = 0.5
    tau_W: float = 0.5
    max_iters: int = 800
    tol_gap: float = 1e-4
    tol_change: float = 1e-4

    def __post_init__(self):
        for name in (
            "lambda_w", "lambda_z", "lambda_e", "rho_x", "rho_z",
            "tau_L", "tau_W", "tol_gap", "tol_change",
        ):
            if not getattr(self, name) > 0:
                raise InvalidInputError(f"{name} must be positive")
        for name in ("tau_L", "tau_W"):
            if getattr(self, name) > 1:
                raise InvalidInputError(f"{name} must lie in (0, 1]")
        if int(self.max_iters) < 1:
            raise InvalidInputError("max_iters must be at least 1")


@dataclass
class EmrpcaState:
    L: np.ndarray
    W: np.ndarray
    E: np.ndarray
    U_x: np.ndarray
    Z: np.ndarray
    U_z: np.ndarray
    iter: int = 0

    def copy(self):
        return EmrpcaState(
            self.L.copy(), self.W.copy(), self.E.copy(), self.U_x.copy(),
            self.Z.copy(), self.U_z.copy(), self.iter,
        )


@dataclass
class EmrpcaResult:
    L: np.ndarray
    W: np.ndarray
    E: np.ndarray
    U_x: np.ndarray
    Z: np.ndarray
    U_z: np.ndarray
    trace: IterationTrace
    converged: bool
    n_iter: int
    config: EmrpcaConfig = field(repr=False, default=None)


def d3d(W, dims):
    """Gradient field of the volume view of an ``(m*n, k)`` matrix."""
    return grad3d(to_volume(W, dims))


def d3d_adjoint(G):
    return to_matrix(grad3d_adjoint(G))


def psi_L(state, X, rho_x):
    keep = 1.0 - state.W
    return keep * ((state.L - X) * keep + state.E + state.U_x / rho_x)


def psi_W(state, X, rho_x, L_new=None):
    L = state.L if L_new is None else L_new
    return (X - L) * ((L - X) * (1.0 - state.W) + state.E + state.U_x / rho_x)


def psi_W_hat(state, X, cfg, L_new=None):
    return state.W - cfg.tau_W * psi_W(state, X, cfg.rho_x, L_new)


def update_L_ext(state, X, cfg):
    return svt(state.L - cfg.tau_L * psi_L(state, X, cfg.rho_x), cfg.tau_L / cfg.rho_x)


def w_system(state, X, cfg, dims, L_new=None):
    """Return ``(alpha, Gamma)`` of the W normal equations ``(alpha + rho_z D^T D) W = Gamma``."""
    alpha = 2.0 * cfg.lambda_w + cfg.rho_x / cfg.tau_W
    gamma = (cfg.rho_x / cfg.tau_W) * psi_W_hat(state, X, cfg, L_new) + cfg.rho_z * d3d_adjoint(
        state.Z + state.U_z / cfg.rho_z
    )
    return alpha, gamma


def update_W_ext(state, X, cfg, dims, L_new=None, clamp=True):
    alpha, gamma = w_system(state, X, cfg, dims, L_new)
    W = solve_screened_poisson(gamma, alpha, cfg.rho_z, dims)
    return project_unit_interval(W) if clamp else W


def update_Z(state, cfg, dims, W_new=None):
    W = state.W if W_new is None else W_new
    return shrink_isotropic(d3d(W, dims) - state.U_z / cfg.rho_z, cfg.lambda_z / cfg.rho_z)


def update_E(state, X, cfg, L_new=None, W_new=None):
    L = state.L if L_new is None else L_new
    W = state.W if W_new is None else W_new
    return soft_threshold((W - 1.0) * (L - X) - state.U_x / cfg.rho_x, cfg.lambda_e / cfg.rho_x)


def residual_x(L, W, E, X):
    return (1.0 - W) * (L - X) + E


def residual_z(W, Z, dims):
    return Z - d3d(W, dims)


def update_duals_ext(state, X, cfg, dims):
    """Dual ascent on both constraints, evaluated at the state's (fresh) primals."""
    U_x = state.U_x + cfg.rho_x * residual_x(state.L, state.W, state.E, X)
    U_z = state.U_z + cfg.rho_z * residual_z(state.W, state.Z, dims)
    return U_x, U_z


def group_norm(Z):
    return float(np.sum(np.sqrt(np.sum(Z * Z, axis=0))))


def objective(L, W, Z, E, cfg, nuc=None):
    if nuc is None:
        nuc = nuclear_norm(L)
    return (
        nuc
        + cfg.lambda_w * float(np.vdot(W, W))
        + cfg.lambda_z * group_norm(Z)
        + cfg.lambda_e * float(np.abs(E).sum())
    )


def lagrangian(state, X, cfg, dims, nuc=None):
    W = state.W
    if np.any(W < 0) or np.any(W > 1):
        return np.inf
    rx = residual_x(state.L, W, state.E, X)
    rz = residual_z(W, state.Z, dims)
    return (
        objective(state.L, W, state.Z, state.E, cfg, nuc)
        + float(np.vdot(state.U_z, rz))
        + 0.5 * cfg.rho_z * float(np.vdot(rz, rz))
        + float(np.vdot(state.U_x, rx))
        + 0.5 * cfg.rho_x * float(np.vdot(rx, rx))
    )


def step(state, X, cfg, dims):
    L = update_L_ext(state, X, cfg)
    W = update_W_ext(state, X, cfg, dims, L_new=L)
    Z = update_Z(state, cfg, dims, W_new=W)
    E = update_E(state, X, cfg, L_new=L, W_new=W)
    fresh = EmrpcaState(L, W, E, state.U_x, Z, state.U_z, state.iter)
    U_x, U_z = update_duals_ext(fresh, X, cfg, dims)
    return EmrpcaState(L, W, E, U_x, Z, U_z, state.iter + 1)


def _check_data(X, dims):
    X = np.asarray(X, dtype=float)
    m, n, k = dims
    if X.shape != (m * n, k):
        raise DimensionMismatchError(f"X has shape {X.shape}, dims {tuple(dims)} need {(m * n, k)}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("X contains non-finite values")
    return X


def initial_state(X, dims):
    m, n, k = dims
    zeros = np.zeros_like(X)
    return EmrpcaState(
        median_init(X), zeros.copy(), zeros.copy(), zeros.copy(),
        np.zeros((3, m, n, k)), np.zeros((3, m, n, k)),
    )


def solve_emrpca(X, dims, cfg=None, callback=None, init=None):
    """Run the extended masked-RPCA iteration on an ``(m*n, k)`` matrix.

    ``callback(prev_state, new_state)`` runs after every iteration.
    """
    cfg = cfg or EmrpcaConfig()
    dims = tuple(int(d) for d in dims)
    X = _check_data(X, dims)
    xnorm = max(np.linalg.norm(X), np.finfo(float).tiny)
    state = initial_state(X, dims) if init is None else init.copy()

    trace = IterationTrace(EMRPCA_COLUMNS)
    converged = False
    for _ in range(int(cfg.max_iters)):
        new = step(state, X, cfg, dims)
        if callback is not None:
            callback(state, new)
        rx = float(np.linalg.norm(residual_x(new.L, new.W, new.E, X)))
        rz = float(np.linalg.norm(residual_z(new.W, new.Z, dims)))
        gap = float(np.linalg.norm((1.0 - new.W) * (X - new.L)))
        dL = float(np.linalg.norm(new.L - state.L))
        dW = float(np.linalg.norm(new.W - state.W))
        dU = float(np.sqrt(np.sum((new.U_x - state.U_x) ** 2) + np.sum((new.U_z - state.U_z) ** 2)))
        nuc = nuclear_norm(new.L)
        trace.append(
            iter=new.iter,
            objective=objective(new.L, new.W, new.Z, new.E, cfg, nuc),
            gap=gap,
            rel_gap=gap / xnorm,
            dL=dL,
            dW=dW,
            dU=dU,
            lagrangian=lagrangian(new, X, cfg, dims, nuc),
            residual_x=rx / xnorm,
            residual_z=rz / xnorm,
            e_fraction=float(np.count_nonzero(new.E)) / new.E.size,
        )
        state = new
        if max(rx, rz) / xnorm < cfg.tol_gap and max(dL, dW) / xnorm < cfg.tol_change:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"extended masked RPCA did not converge in {cfg.max_iters} iterations",
            ConvergenceWarning,
            stacklevel=2,
        )
    s = state
    return EmrpcaResult(s.L, s.W, s.E, s.U_x, s.Z, s.U_z, trace, converged, s.iter, cfg)
