"""Input validation helpers shared by every module."""

import numbers

import numpy as np

from .exceptions import NotPsd

SYM_TOL = 1e-10
PSD_TOL = 1e-10


def check_matrix(M, name="matrix", shape=None):
    """Return ``M`` as a finite 2-D float array, optionally of fixed shape."""
    M = np.array(M, dtype=float, ndmin=2, copy=True)
    if M.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got ndim={M.ndim}")
    if M.size == 0:
        raise ValueError(f"{name} is empty")
    if not np.all(np.isfinite(M)):
        raise ValueError(f"{name} contains non-finite entries")
    if shape is not None and M.shape != tuple(shape):
        raise ValueError(f"{name} must have shape {tuple(shape)}, got {M.shape}")
    return M


def check_square(M, name="matrix", n=None):
    M = check_matrix(M, name)
    if M.shape[0] != M.shape[1]:
        raise ValueError(f"{name} must be square, got {M.shape}")
    if n is not None and M.shape[0] != n:
        raise ValueError(f"{name} must be {n}x{n}, got {M.shape}")
    return M


def check_symmetric_psd(M, name="matrix", n=None, definite=False):
    """Symmetrize ``M`` and verify it is positive (semi)definite.

    Asymmetry above ``SYM_TOL`` (relative Frobenius) is rejected rather than
    silently averaged away; within tolerance the result is exactly symmetric.
    """
    M = check_square(M, name, n)
    scale = max(np.linalg.norm(M), 1.0)
    if np.linalg.norm(M - M.T) > SYM_TOL * scale:
        raise ValueError(f"{name} is not symmetric")
    M = 0.5 * (M + M.T)
    w = np.linalg.eigvalsh(M)
    top = max(w[-1], 0.0)
    floor = PSD_TOL * top if top > 0 else PSD_TOL
    if w[0] < -floor:
        raise NotPsd(f"{name} is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    if definite and w[0] <= floor:
        raise ValueError(f"{name} must be positive definite")
    return M


def check_vector(x, name="vector", size=None):
    x = np.array(x, dtype=float, ndmin=1, copy=True).ravel()
    if not np.all(np.isfinite(x)):
        raise ValueError(f"{name} contains non-finite entries")
    if size is not None and x.size != size:
        raise ValueError(f"{name} must have length {size}, got {x.size}")
    return x


def check_positive_int(value, name):
    if isinstance(value, bool) or not isinstance(value, numbers.Integral):
        raise ValueError(f"{name} must be an integer, got {value!r}")
    if value < 1:
        raise ValueError(f"{name} must be >= 1, got {value}")
    return int(value)


def check_confidence(eta, name="eta", upper=1.0):
    eta = float(eta)
    if not 0.0 < eta < upper:
        raise ValueError(f"{name} must lie in (0, {upper}), got {eta}")
    return eta
