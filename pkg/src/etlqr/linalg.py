"""Dense linear-algebra kernel.

Small discrete Lyapunov and Riccati solvers plus the few spectral helpers the
cost and trigger computations need. Everything here works on plain numpy
arrays and is a pure function of its inputs.
"""

import numpy as np

from ._validation import check_matrix, check_square, check_symmetric_psd
from .exceptions import (
    NonConvergence,
    NotPsd,
    NotSchurStable,
    NotStabilizable,
    SingularSystem,
)

__all__ = [
    "solve_dlyap_controllability",
    "solve_dlyap_observability",
    "solve_dare",
    "lqr_gain",
    "spectral_radius",
    "symmetric_sqrt",
    "eigvals_sym",
    "is_stabilizable",
    "is_controllable",
]

KRONECKER_MAX_N = 30
KRONECKER_COND_LIMIT = 1e12
STABILITY_MARGIN = 1e-12


def spectral_radius(A):
    """Largest eigenvalue magnitude of a square matrix."""
    A = check_square(A, "A")
    try:
        w = np.linalg.eigvals(A)
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(f"eigenvalue iteration failed: {exc}") from exc
    return float(np.max(np.abs(w)))


def _lyap_kronecker(A, C):
    n = A.shape[0]
    K = np.eye(n * n) - np.kron(A, A)
    if np.linalg.cond(K) > KRONECKER_COND_LIMIT:
        return None
    c = C.ravel()
    try:
        x = np.linalg.solve(K, c)
    except np.linalg.LinAlgError:
        return None
    # one step of iterative refinement
    x += np.linalg.solve(K, c - K @ x)
    return x.reshape(n, n)


def _lyap_doubling(A, C, max_iter=64):
    X = C.copy()
    Ak = A.copy()
    for _ in range(max_iter):
        X = X + Ak @ X @ Ak.T
        Ak = Ak @ Ak
        if np.linalg.norm(Ak, 2) < 1e-17:
            return X
    raise NonConvergence("Lyapunov doubling did not converge")


def solve_dlyap_controllability(A, C):
    """Solve ``A X A^T - X + C = 0`` for ``X``.

    Parameters
    ----------
    A : (n, n) array_like
        Schur-stable system matrix.
    C : (n, n) array_like
        Symmetric positive semidefinite forcing term.

    Returns
    -------
    X : (n, n) ndarray
        Symmetric solution, positive semidefinite whenever ``C`` is.
    """
    A = check_square(A, "A")
    C = check_symmetric_psd(C, "C", n=A.shape[0])
    rho = spectral_radius(A)
    if rho >= 1.0 - STABILITY_MARGIN:
        raise NotSchurStable(f"spectral radius {rho:.6g} is not below one")
    X = _lyap_kronecker(A, C) if A.shape[0] <= KRONECKER_MAX_N else None
    if X is None:
        # large or badly conditioned (strongly non-normal A): sum the series instead
        try:
            X = _lyap_doubling(A, C)
        except NonConvergence as exc:
            raise SingularSystem("Lyapunov equation is numerically singular") from exc
    if not np.all(np.isfinite(X)):
        raise SingularSystem("Lyapunov solution is not finite")
    return 0.5 * (X + X.T)


def solve_dlyap_observability(A, Q):
    """Solve ``A^T X A - X + Q = 0`` for ``X``."""
    A = check_square(A, "A")
    return solve_dlyap_controllability(A.T, Q)


def _check_lqr_inputs(A, B, Q, R):
    A = check_square(A, "A")
    n = A.shape[0]
    B = check_matrix(B, "B")
    if B.shape[0] != n:
        raise ValueError(f"B must have {n} rows, got {B.shape}")
    Q = check_symmetric_psd(Q, "Q", n=n)
    R = check_symmetric_psd(R, "R", n=B.shape[1], definite=True)
    return A, B, Q, R


def _riccati_step(P, A, B, Q, R):
    BtPA = B.T @ P @ A
    P_next = A.T @ P @ A - BtPA.T @ np.linalg.solve(R + B.T @ P @ B, BtPA) + Q
    return 0.5 * (P_next + P_next.T)


def _dare_iteration(A, B, Q, R, tol, max_iter):
    P = Q.copy()
    for _ in range(max_iter):
        P_next = _riccati_step(P, A, B, Q, R)
        if not np.all(np.isfinite(P_next)):
            break
        if np.linalg.norm(P_next - P) <= tol * max(np.linalg.norm(P_next), 1e-300):
            return P_next
        P = P_next
    raise NotStabilizable("Riccati value iteration did not converge")


def _dare_doubling(A, B, Q, R, tol, max_iter):
    # structure-preserving doubling: after k steps H equals the value
    # iterate of horizon 2**k
    n = A.shape[0]
    I = np.eye(n)
    Ak = A.copy()
    G = B @ np.linalg.solve(R, B.T)
    H = Q.copy()
    for _ in range(max_iter):
        W = I + G @ H
        try:
            WA = np.linalg.solve(W, Ak)
            WG = np.linalg.solve(W, G)
        except np.linalg.LinAlgError:
            break
        H_next = H + Ak.T @ H @ WA
        G = G + Ak @ WG @ Ak.T
        Ak = Ak @ WA
        H_next = 0.5 * (H_next + H_next.T)
        G = 0.5 * (G + G.T)
        if not np.all(np.isfinite(H_next)):
            break
        if np.linalg.norm(H_next - H) <= tol * max(np.linalg.norm(H_next), 1e-300):
            return H_next
        H = H_next
    raise NotStabilizable("Riccati doubling did not converge")


def solve_dare(A, B, Q, R, method="doubling", tol=1e-12, max_iter=None):
    """Stabilizing solution of the discrete algebraic Riccati equation.

    ``P = A^T P A - A^T P B (R + B^T P B)^{-1} B^T P A + Q``.

    ``method="doubling"`` runs the doubling-accelerated value iteration,
    ``method="iteration"`` the plain fixed-point recursion (slow, used as an
    independent cross-check).
    """
    A, B, Q, R = _check_lqr_inputs(A, B, Q, R)
    if method == "doubling":
        P = _dare_doubling(A, B, Q, R, tol, max_iter or 200)
    elif method == "iteration":
        P = _dare_iteration(A, B, Q, R, tol, max_iter or 10**6)
    else:
        raise ValueError(f"unknown method {method!r}")
    F = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
    if spectral_radius(A - B @ F) >= 1.0:
        raise NotStabilizable("Riccati solution does not stabilize (A, B)")
    return P


def lqr_gain(A, B, Q, R, **kwargs):
    """Infinite-horizon discrete LQR gain ``F`` for the law ``u = -F x``."""
    A, B, Q, R = _check_lqr_inputs(A, B, Q, R)
    P = solve_dare(A, B, Q, R, **kwargs)
    return np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)


def symmetric_sqrt(M):
    """Symmetric PSD square root ``S`` with ``S @ S == M``."""
    M = check_square(M, "M")
    M = 0.5 * (M + M.T)
    w, U = np.linalg.eigh(M)
    top = max(w[-1], 0.0)
    if w[0] < -1e-10 * (top if top > 0 else 1.0):
        raise NotPsd(f"matrix is not positive semidefinite (min eigenvalue {w[0]:.3e})")
    S = (U * np.sqrt(np.clip(w, 0.0, None))) @ U.T
    return 0.5 * (S + S.T)


def eigvals_sym(M):
    """Eigenvalues of a symmetric matrix, in descending order."""
    M = check_square(M, "M")
    scale = max(np.linalg.norm(M), 1.0)
    if np.linalg.norm(M - M.T) > 1e-10 * scale:
        raise ValueError("M is not symmetric")
    try:
        w = np.linalg.eigvalsh(0.5 * (M + M.T))
    except np.linalg.LinAlgError as exc:
        raise NonConvergence(f"symmetric eigensolver failed: {exc}") from exc
    return w[::-1].copy()


def _rank(M, rtol=1e-8):
    s = np.linalg.svd(M, compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > rtol * s[0]))


def is_controllable(A, B, rtol=1e-8):
    """Rank test on the controllability matrix ``[B, AB, ..., A^{n-1}B]``."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    blocks = [B]
    for _ in range(n - 1):
        blocks.append(A @ blocks[-1])
    return _rank(np.hstack(blocks), rtol) == n


def is_stabilizable(A, B, rtol=1e-8):
    """PBH test restricted to eigenvalues on or outside the unit circle."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    n = A.shape[0]
    for lam in np.linalg.eigvals(A):
        if abs(lam) >= 1.0 - 1e-12:
            pbh = np.hstack([A - lam * np.eye(n), B])
            if _rank(pbh, rtol) < n:
                return False
    return True
