"""Classic RPCA baseline: principal component pursuit plus mask thresholding.

PCP solves ``min ||L||_* + lambda_s ||S||_1  s.t.  L + S = X`` with the
inexact augmented Lagrange multiplier method (alternating singular value
thresholding and soft-thresholding, with a geometrically increasing penalty).
The foreground mask is then read off ``|S|`` with a fixed or Otsu threshold.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.exceptions import ConvergenceWarning

from .exceptions import DegenerateInputError, InvalidInputError
from .mrpca import nuclear_norm
from .prox import soft_threshold, svt
from .trace import RPCA_COLUMNS, IterationTrace


@dataclass(frozen=True)
class RpcaConfig:
    """``lambda_s`` defaults to ``1/sqrt(max(mn, k))`` and ``mu`` to ``1.25/sigma_max(X)``."""

    lambda_s: float = None
    mu: float = None
    mu_growth: float = 1.5
    max_iters: int = 1000
    tol: float = 1e-7

    def __post_init__(self):
        for name in ("lambda_s", "mu"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise InvalidInputError(f"{name} must be positive")
        if not self.mu_growth >= 1:
            raise InvalidInputError("mu_growth must be at least 1")
        if not self.tol > 0 or int(self.max_iters) < 1:
            raise InvalidInputError("tol must be positive and max_iters at least 1")


@dataclass
class PcpResult:
    L: np.ndarray
    S: np.ndarray
    trace: IterationTrace
    converged: bool
    n_iter: int
    lambda_s: float = None
    config: RpcaConfig = field(repr=False, default=None)


def solve_pcp(X, cfg=None):
    cfg = cfg or RpcaConfig()
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise InvalidInputError("X must be a finite 2D matrix")
    lam = cfg.lambda_s if cfg.lambda_s is not None else 1.0 / np.sqrt(max(X.shape))
    trace = IterationTrace(RPCA_COLUMNS)
    L = np.zeros_like(X)
    S = np.zeros_like(X)

    xnorm = np.linalg.norm(X)
    sigma_max = np.linalg.norm(X, 2)
    if sigma_max == 0:
        return PcpResult(L, S, trace, True, 0, lam, cfg)

    Y = X / max(sigma_max, np.abs(X).max() / lam)
    mu = cfg.mu if cfg.mu is not None else 1.25 / sigma_max
    mu_max = mu * 1e7

    converged = False
    it = 0
    for it in range(1, int(cfg.max_iters) + 1):
        L_new = svt(X - S + Y / mu, 1.0 / mu)
        S_new = soft_threshold(X - L_new + Y / mu, lam / mu)
        R = X - L_new - S_new
        dY = mu * R
        Y = Y + dY
        res = float(np.linalg.norm(R))
        nuc = nuclear_norm(L_new)
        l1 = float(np.abs(S_new).sum())
        trace.append(
            iter=it,
            objective=nuc + lam * l1,
            gap=res,
            rel_gap=res / xnorm,
            dL=float(np.linalg.norm(L_new - L)),
            dW=float(np.linalg.norm(S_new - S)),
            dU=float(np.linalg.norm(dY)),
            lagrangian=nuc + lam * l1 + float(np.vdot(Y - dY, R)) + 0.5 * mu * res**2,
        )
        L, S = L_new, S_new
        mu = min(mu * cfg.mu_growth, mu_max)
        if res / xnorm < cfg.tol:
            converged = True
            break

    if not converged:
        warnings.warn(
            f"PCP did not converge in {cfg.max_iters} iterations", ConvergenceWarning, stacklevel=2
        )
    return PcpResult(L, S, trace, converged, it, lam, cfg)


def _otsu_histogram(values, nbins=256):
    values = np.asarray(values, dtype=float).ravel()
    if values.size == 0 or not np.all(np.isfinite(values)):
        raise InvalidInputError("Otsu threshold needs finite values")
    lo, hi = values.min(), values.max()
    if lo == hi:
        raise DegenerateInputError("Otsu threshold undefined for constant input")
    counts, edges = np.histogram(values, bins=nbins, range=(lo, hi))
    return counts.astype(float), edges


def otsu_threshold(values, nbins=256):
    """Histogram threshold maximizing the between-class variance.

    The histogram has ``nbins`` equal bins spanning ``[min, max]``. The
    returned value is the edge between the last background bin and the
    first foreground bin; ties go to the lowest split.
    """
    counts, edges = _otsu_histogram(values, nbins)
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(counts)[:-1]
    w1 = counts.sum() - w0
    s0 = np.cumsum(counts * centers)[:-1]
    s1 = (counts * centers).sum() - s0
    with np.errstate(divide="ignore", invalid="ignore"):
        between = w0 * w1 * (s0 / w0 - s1 / w1) ** 2
    between = np.where((w0 > 0) & (w1 > 0), between, -np.inf)
    split = int(np.argmax(between))
    return float(edges[split + 1])


@dataclass(frozen=True)
class MaskThresholdRule:
    """``variant`` is ``"fixed"`` (with ``value`` in [0, 1]) or ``"otsu"``."""

    variant: str = "otsu"
    value: float = None

    def __post_init__(self):
        if self.variant == "fixed":
            if self.value is None or not 0 <= self.value <= 1:
                raise InvalidInputError("fixed threshold must lie in [0, 1]")
        elif self.variant != "otsu":
            raise InvalidInputError(f"unknown threshold rule {self.variant!r}")

    @classmethod
    def parse(cls, text):
        """``"otsu"`` or a number."""
        if str(text).lower() == "otsu":
            return cls("otsu")
        return cls("fixed", float(text))

    def threshold(self, S):
        if self.variant == "fixed":
            return self.value
        mag = np.abs(np.asarray(S, dtype=float))
        if mag.size == 0 or mag.min() == mag.max():
            # nothing to separate (e.g. S == 0): no entry is strictly above the max
            return float(mag.max()) if mag.size else 0.0
        return otsu_threshold(mag)


def mask_from_sparse(S, rule):
    """Binary mask (as floats) of entries with ``|S|`` above the rule's threshold."""
    S = np.asarray(S, dtype=float)
    return (np.abs(S) > rule.threshold(S)).astype(float)
