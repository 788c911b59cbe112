"""scikit-learn style front ends for the three decompositions.

All estimators take a clip either as an ``(m, n, k)`` volume or as an
``(m*n, k)`` matrix (with ``frame_shape=(m, n)`` when the spatial layout is
needed). Fitted arrays are returned in the same layout as the input.

The decompositions are transductive, so like other embedding-style
estimators they offer ``fit`` and ``fit_transform`` but no out-of-sample
``transform``. ``fit_transform`` returns the soft foreground mask.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .baseline import MaskThresholdRule, RpcaConfig, mask_from_sparse, solve_pcp
from .emrpca import EmrpcaConfig, solve_emrpca
from .exceptions import DimensionMismatchError, InvalidInputError
from .mrpca import MrpcaConfig, solve_mrpca
from .prox import to_matrix, to_volume


def auto_rho(X, scale=4.0):
    """Penalty scaled to the data: ``scale / sigma_max(X)``."""
    sigma = np.linalg.norm(X, 2)
    if sigma == 0:
        return 1.0
    return scale / sigma


def check_video(X, frame_shape=None, require_frame_shape=False):
    """Validate a clip and return ``(matrix, dims, was_volume)``.

    ``dims`` is ``None`` for a matrix input without ``frame_shape``.
    """
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_min_samples=1)
    if X.ndim == 3:
        m, n, k = X.shape
        if frame_shape is not None and tuple(frame_shape) != (m, n):
            raise DimensionMismatchError(f"frame_shape {frame_shape} contradicts volume {X.shape}")
        return to_matrix(X), (m, n, k), True
    if X.ndim != 2:
        raise DimensionMismatchError(f"expected a 2D or 3D array, got {X.ndim}D")
    if frame_shape is None:
        if require_frame_shape:
            raise InvalidInputError("frame_shape is required for matrix input")
        return X, None, False
    m, n = frame_shape
    if m * n != X.shape[0]:
        raise DimensionMismatchError(f"frame_shape {frame_shape} needs {m * n} rows, got {X.shape[0]}")
    return X, (m, n, X.shape[1]), False


def check_unit_range(X):
    if X.min() < 0 or X.max() > 1:
        raise InvalidInputError("input must be normalized to [0, 1]")


class _VideoDecomposition(BaseEstimator):
    def _restore(self, A):
        if self._was_volume:
            return to_volume(A, self.dims_)
        return A

    def fit_transform(self, X, y=None):
        return self.fit(X, y).mask_

    def foreground(self, cut=0.5):
        """Binary foreground mask ``mask_ > cut``."""
        check_is_fitted(self, "mask_")
        return self.mask_ > cut


class MaskedRPCA(_VideoDecomposition):
    """Low-rank background plus a soft overlay mask, l1-penalized.

    Parameters
    ----------
    lambda_w : float
        Weight of the mask's l1 norm. Larger values give sparser masks
        (higher precision, lower recall).
    rho_x : float or "auto"
        Penalty of the overlay constraint. ``"auto"`` uses ``4 / sigma_max(X)``.
    tau_L, tau_W : float in (0, 1]
        Linearization step sizes.
    max_iter, tol_gap, tol_change
        Stopping rule: relative feasibility gap below ``tol_gap`` and relative
        change of ``L`` and ``W`` below ``tol_change``.
    frame_shape : (m, n), optional
        Only used to return volumes for matrix input.

    Attributes
    ----------
    low_rank_, mask_, dual_ : ndarray
    trace_ : IterationTrace
    converged_ : bool
    n_iter_ : int
    rho_x_ : float
        The penalty actually used.
    """

    def __init__(self, lambda_w=1e-3, rho_x="auto", tau_L=0.5, tau_W=0.5,
                 max_iter=500, tol_gap=1e-4, tol_change=1e-4, frame_shape=None):
        self.lambda_w = lambda_w
        self.rho_x = rho_x
        self.tau_L = tau_L
        self.tau_W = tau_W
        self.max_iter = max_iter
        self.tol_gap = tol_gap
        self.tol_change = tol_change
        self.frame_shape = frame_shape

    def make_config(self, X):
        rho = auto_rho(X) if self.rho_x == "auto" else float(self.rho_x)
        return MrpcaConfig(
            lambda_w=self.lambda_w, rho_x=rho, tau_L=self.tau_L, tau_W=self.tau_W,
            max_iters=self.max_iter, tol_gap=self.tol_gap, tol_change=self.tol_change,
        )

    def fit(self, X, y=None, callback=None):
        Xm, self.dims_, self._was_volume = check_video(X, self.frame_shape)
        check_unit_range(Xm)
        cfg = self.make_config(Xm)
        res = solve_mrpca(Xm, cfg, callback=callback)
        self.config_ = cfg
        self.rho_x_ = cfg.rho_x
        self.low_rank_ = self._restore(res.L)
        self.mask_ = self._restore(res.W)
        self.dual_ = self._restore(res.U_x)
        self.trace_ = res.trace
        self.converged_ = res.converged
        self.n_iter_ = res.n_iter
        return self


class ExtendedMaskedRPCA(_VideoDecomposition):
    """Masked RPCA with a TV-regularized mask and a sparse background perturbation.

    Parameters
    ----------
    lambda_w : float
        Weight of the mask energy ``||W||_F^2``.
    lambda_z : float
        Weight of the isotropic 3D total variation of the mask.
    lambda_e : float
        Weight of ``||E||_1`` (dynamic background, noise). Like the sparse
        weight of PCP it should scale as ``1/sqrt(max(m*n, k))``; the default
        (about ``0.77/32``) suits 32x32 frames. A value well below that scale lets
        ``E`` absorb the whole clip.
    rho_x, rho_z : float or "auto"
        Constraint penalties; ``"auto"`` uses ``4 / sigma_max(X)`` for ``rho_x``
        and ``10 * rho_x`` for ``rho_z``.
    tau_L, tau_W, max_iter, tol_gap, tol_change
        As for :class:`MaskedRPCA`; ``tol_gap`` applies to both constraint residuals.
    frame_shape : (m, n)
        Required for matrix input.

    Attributes
    ----------
    low_rank_, mask_, sparse_ : ndarray
    trace_, converged_, n_iter_, rho_x_, rho_z_
    """

    def __init__(self, lambda_w=1e-2, lambda_z=3e-3, lambda_e=2.4e-2, rho_x="auto", rho_z="auto",
                 tau_L=0.5, tau_W=0.5, max_iter=800, tol_gap=1e-4, tol_change=1e-4,
                 frame_shape=None):
        self.lambda_w = lambda_w
        self.lambda_z = lambda_z
        self.lambda_e = lambda_e
        self.rho_x = rho_x
        self.rho_z = rho_z
        self.tau_L = tau_L
        self.tau_W = tau_W
        self.max_iter = max_iter
        self.tol_gap = tol_gap
        self.tol_change = tol_change
        self.frame_shape = frame_shape

    def make_config(self, X):
        rho_x = auto_rho(X) if self.rho_x == "auto" else float(self.rho_x)
        rho_z = 10.0 * rho_x if self.rho_z == "auto" else float(self.rho_z)
        return EmrpcaConfig(
            lambda_w=self.lambda_w, lambda_z=self.lambda_z, lambda_e=self.lambda_e,
            rho_x=rho_x, rho_z=rho_z, tau_L=self.tau_L, tau_W=self.tau_W,
            max_iters=self.max_iter, tol_gap=self.tol_gap, tol_change=self.tol_change,
        )

    def fit(self, X, y=None, callback=None):
        Xm, self.dims_, self._was_volume = check_video(X, self.frame_shape, require_frame_shape=True)
        check_unit_range(Xm)
        cfg = self.make_config(Xm)
        res = solve_emrpca(Xm, self.dims_, cfg, callback=callback)
        self.config_ = cfg
        self.rho_x_ = cfg.rho_x
        self.rho_z_ = cfg.rho_z
        self.low_rank_ = self._restore(res.L)
        self.mask_ = self._restore(res.W)
        self.sparse_ = self._restore(res.E)
        self.trace_ = res.trace
        self.converged_ = res.converged
        self.n_iter_ = res.n_iter
        return self


class RobustPCA(_VideoDecomposition):
    """Principal component pursuit with a thresholded sparse part as the mask.

    Parameters
    ----------
    lambda_s : float, optional
        Sparse weight, default ``1/sqrt(max(mn, k))``.
    mu : float, optional
        Initial ALM penalty, default ``1.25 / sigma_max(X)``.
    threshold : "otsu" or float in [0, 1]
        Rule applied to ``|S|`` to obtain the binary mask.

    Attributes
    ----------
    low_rank_, sparse_, mask_ : ndarray
        ``mask_`` is binary (0.0 / 1.0).
    threshold_ : float
    """

    def __init__(self, lambda_s=None, mu=None, max_iter=1000, tol=1e-7, threshold="otsu",
                 frame_shape=None):
        self.lambda_s = lambda_s
        self.mu = mu
        self.max_iter = max_iter
        self.tol = tol
        self.threshold = threshold
        self.frame_shape = frame_shape

    def fit(self, X, y=None):
        Xm, self.dims_, self._was_volume = check_video(X, self.frame_shape)
        rule = MaskThresholdRule.parse(self.threshold)
        cfg = RpcaConfig(lambda_s=self.lambda_s, mu=self.mu, max_iters=self.max_iter, tol=self.tol)
        res = solve_pcp(Xm, cfg)
        self.config_ = cfg
        self.lambda_s_ = res.lambda_s
        self.rule_ = rule
        self.threshold_ = rule.threshold(res.S)
        self.low_rank_ = self._restore(res.L)
        self.sparse_ = self._restore(res.S)
        self.mask_ = self._restore(mask_from_sparse(res.S, rule))
        self.trace_ = res.trace
        self.converged_ = res.converged
        self.n_iter_ = res.n_iter
        return self
