"""Proximal operators, periodic 3D differences and the FFT screened-Poisson solve.

Layout conventions used throughout the package:

* A video volume is an ``(m, n, k)`` array (height, width, frames).
* Its matrix view is ``(m*n, k)``: column ``j`` is frame ``j`` vectorized in
  column-major (Fortran) order, so pixel ``(i, c)`` sits at row ``i + m*c``.
  :func:`to_matrix` and :func:`to_volume` convert between the two.
* A gradient field is a ``(3, m, n, k)`` array whose channels are the
  horizontal (along width), vertical (along height) and depth (along frames)
  forward differences, all with periodic wraparound.
"""

import numpy as np

from .exceptions import DimensionMismatchError, InvalidInputError

__all__ = [
    "to_matrix",
    "to_volume",
    "svt",
    "soft_threshold",
    "project_unit_interval",
    "grad3d",
    "grad3d_adjoint",
    "tv_norm",
    "shrink_isotropic",
    "laplacian_eigenvalues",
    "solve_screened_poisson",
]

# channel index -> array axis of an (m, n, k) volume
_AXES = (1, 0, 2)


def to_matrix(T):
    """Reshape an ``(m, n, k)`` volume into its ``(m*n, k)`` matrix view."""
    T = np.asarray(T)
    if T.ndim != 3:
        raise DimensionMismatchError(f"expected a 3D volume, got shape {T.shape}")
    m, n, k = T.shape
    return T.reshape((m * n, k), order="F")


def to_volume(Y, dims):
    """Inverse of :func:`to_matrix`."""
    Y = np.asarray(Y)
    m, n, k = dims
    if Y.shape != (m * n, k):
        raise DimensionMismatchError(
            f"matrix of shape {Y.shape} does not match dims {tuple(dims)}"
        )
    return Y.reshape((m, n, k), order="F")


def _check_finite(Y, name="input"):
    if not np.all(np.isfinite(Y)):
        raise InvalidInputError(f"{name} contains non-finite values")


def svt(Y, delta):
    """Singular value thresholding ``U (S - delta)_+ V^T``.

    This is the proximal operator of ``delta * ||.||_*``.
    """
    if delta < 0:
        raise InvalidInputError("delta must be non-negative")
    Y = np.asarray(Y, dtype=float)
    _check_finite(Y)
    if delta == 0:
        return Y.copy()
    U, s, Vt = np.linalg.svd(Y, full_matrices=False)
    s = np.maximum(s - delta, 0.0)
    r = int(np.count_nonzero(s))
    if r == 0:
        return np.zeros_like(Y)
    return (U[:, :r] * s[:r]) @ Vt[:r]


def soft_threshold(Y, t):
    """Entrywise ``sign(y) * max(|y| - t, 0)``."""
    if t < 0:
        raise InvalidInputError("threshold must be non-negative")
    Y = np.asarray(Y, dtype=float)
    _check_finite(Y)
    return np.sign(Y) * np.maximum(np.abs(Y) - t, 0.0)


def project_unit_interval(Y):
    return np.clip(np.asarray(Y, dtype=float), 0.0, 1.0)


def grad3d(T):
    """Periodic forward differences of an ``(m, n, k)`` volume.

    Returns a ``(3, m, n, k)`` field ordered (horizontal, vertical, depth).
    """
    T = np.asarray(T, dtype=float)
    if T.ndim != 3:
        raise DimensionMismatchError(f"expected a 3D volume, got shape {T.shape}")
    return np.stack([np.roll(T, -1, axis=ax) - T for ax in _AXES])


def grad3d_adjoint(G):
    """Adjoint of :func:`grad3d` (a negative periodic divergence)."""
    G = np.asarray(G, dtype=float)
    if G.ndim != 4 or G.shape[0] != 3:
        raise DimensionMismatchError(
            f"expected a (3, m, n, k) gradient field, got shape {G.shape}"
        )
    out = np.zeros(G.shape[1:])
    for g, ax in zip(G, _AXES):
        out += np.roll(g, 1, axis=ax) - g
    return out


def _magnitude(G):
    return np.sqrt(np.sum(G * G, axis=0))


def tv_norm(T):
    """Isotropic total variation: sum of per-voxel gradient magnitudes."""
    return float(np.sum(_magnitude(grad3d(T))))


def shrink_isotropic(G, t):
    """Group soft-thresholding of each voxel's 3-vector of differences."""
    if t < 0:
        raise InvalidInputError("threshold must be non-negative")
    G = np.asarray(G, dtype=float)
    if G.ndim != 4 or G.shape[0] != 3:
        raise DimensionMismatchError(
            f"expected a (3, m, n, k) gradient field, got shape {G.shape}"
        )
    mag = _magnitude(G)
    scale = np.zeros_like(mag)
    keep = mag > t
    scale[keep] = (mag[keep] - t) / mag[keep]
    return G * scale


def laplacian_eigenvalues(dims):
    """Eigenvalues of ``D^T D`` on the 3D DFT grid for periodic forward differences."""
    m, n, k = dims
    ev = [4.0 * np.sin(np.pi * np.arange(d) / d) ** 2 for d in (m, n, k)]
    return ev[0][:, None, None] + ev[1][None, :, None] + ev[2][None, None, :]


def solve_screened_poisson(rhs, alpha, rho_z, dims, imag_tol=1e-8):
    """Solve ``(alpha I + rho_z D^T D) x = rhs`` exactly via the 3D FFT.

    ``rhs`` is given and returned in the ``(m*n, k)`` matrix view.
    """
    if alpha <= 0:
        raise InvalidInputError("alpha must be positive")
    if rho_z < 0:
        raise InvalidInputError("rho_z must be non-negative")
    vol = to_volume(np.asarray(rhs, dtype=float), dims)
    if rho_z == 0:
        return to_matrix(vol / alpha)
    denom = alpha + rho_z * laplacian_eigenvalues(dims)
    sol = np.fft.ifftn(np.fft.fftn(vol) / denom)
    scale = max(np.abs(sol.real).max(), np.finfo(float).tiny)
    if np.abs(sol.imag).max() > imag_tol * scale:
        raise InvalidInputError("FFT solve produced a non-negligible imaginary part")
    return to_matrix(np.ascontiguousarray(sol.real))
