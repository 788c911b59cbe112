"""Runtime checks of the optimality and dual-ascent properties of the solvers.

All functions are pure; they are meant to be called from a solver
``callback(prev_state, new_state)`` or on a finished run.
"""

from dataclasses import dataclass

import numpy as np

from . import emrpca, mrpca


@dataclass(frozen=True)
class IdentityCheck:
    """``lhs`` should equal ``rhs``; ``scale`` is the magnitude used for the relative error."""

    lhs: float
    rhs: float
    scale: float

    @property
    def rel_error(self):
        return abs(self.lhs - self.rhs) / max(self.scale, np.finfo(float).tiny)


def dual_ascent_identity(prev, new, X, cfg):
    """Increase of the Lagrangian from the dual step alone vs ``||dU||^2 / rho``.

    The relative error is measured against the size of the Lagrangian itself.
    """
    L, W = new.L, new.W
    before = mrpca.lagrangian(L, W, prev.U_x, X, cfg)
    after = mrpca.lagrangian(L, W, new.U_x, X, cfg)
    dU = new.U_x - prev.U_x
    rhs = float(np.vdot(dU, dU)) / cfg.rho_x
    return IdentityCheck(after - before, rhs, max(abs(before), abs(after), rhs))


def nuclear_subgradient_violation(G, L, rank_tol=1e-10):
    """How far ``G`` is from the subdifferential of the nuclear norm at ``L``.

    ``G`` is a subgradient iff ``G = U1 V1^T + R`` with ``U1^T R = 0``,
    ``R V1 = 0`` and ``||R||_2 <= 1``, where ``U1, V1`` span the range of ``L``.
    Returns the largest violation of those three conditions.
    """
    U, s, Vt = np.linalg.svd(L, full_matrices=False)
    r = int(np.sum(s > rank_tol * max(s[0] if s.size else 0.0, 1.0)))
    U1, V1 = U[:, :r], Vt[:r].T
    R = G - U1 @ V1.T
    left = np.abs(U1.T @ R).max() if r else 0.0
    right = np.abs(R @ V1).max() if r else 0.0
    spectral = np.linalg.norm(R, 2) - 1.0 if R.size else 0.0
    return float(max(left, right, spectral, 0.0))


def box_l1_subgradient_violation(G, W, lam):
    """Entrywise distance of ``G`` from the subdifferential of ``lam*|w| + indicator[0,1]``."""
    inner = (W > 0) & (W < 1)
    viol = np.zeros_like(G)
    viol[inner] = np.abs(G[inner] - lam)
    at0 = W <= 0
    viol[at0] = np.maximum(G[at0] - lam, 0.0)
    at1 = W >= 1
    viol[at1] = np.maximum(lam - G[at1], 0.0)
    return float(viol.max()) if viol.size else 0.0


def mrpca_subgradients(prev, new, X, cfg):
    """Subgradient candidates certified by the L and W steps at the new iterate."""
    G_L = -(cfg.rho_x / cfg.tau_L) * (new.L - prev.L) - cfg.rho_x * mrpca.lambda_L(prev, X, cfg.rho_x)
    G_W = -(cfg.rho_x / cfg.tau_W) * (new.W - prev.W) - cfg.rho_x * mrpca.lambda_W(
        prev, X, cfg.rho_x, L_new=new.L
    )
    return G_L, G_W


def mrpca_subgradient_violations(prev, new, X, cfg):
    """``(nuclear, box_l1)`` violations of ``G_L in d||L||_*`` and ``G_W in d(lambda_w|W|_1 + box)``."""
    G_L, G_W = mrpca_subgradients(prev, new, X, cfg)
    return (
        nuclear_subgradient_violation(G_L, new.L),
        box_l1_subgradient_violation(G_W, new.W, cfg.lambda_w),
    )


def emrpca_dual_identities(prev, new, X, cfg, dims):
    """Dual-ascent identities for ``U_x`` and ``U_z`` separately."""
    fresh = emrpca.EmrpcaState(new.L, new.W, new.E, prev.U_x, new.Z, prev.U_z)
    base = emrpca.lagrangian(fresh, X, cfg, dims)
    checks = []
    for name, rho in (("U_x", cfg.rho_x), ("U_z", cfg.rho_z)):
        moved = emrpca.EmrpcaState(new.L, new.W, new.E, fresh.U_x, new.Z, fresh.U_z)
        setattr(moved, name, getattr(new, name))
        after = emrpca.lagrangian(moved, X, cfg, dims)
        d = getattr(new, name) - getattr(prev, name)
        rhs = float(np.vdot(d, d)) / rho
        checks.append(IdentityCheck(after - base, rhs, max(abs(base), abs(after), rhs)))
    return tuple(checks)


def w_normal_equation_residual(prev, new, X, cfg, dims):
    """Relative residual of the pre-clamp FFT solve in the assembled normal equations."""
    alpha, gamma = emrpca.w_system(prev, X, cfg, dims, L_new=new.L)
    W = emrpca.update_W_ext(prev, X, cfg, dims, L_new=new.L, clamp=False)
    lhs = alpha * W + cfg.rho_z * emrpca.d3d_adjoint(emrpca.d3d(W, dims))
    return float(np.linalg.norm(lhs - gamma) / max(np.linalg.norm(gamma), np.finfo(float).tiny))
