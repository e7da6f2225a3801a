"""Statistics of the finite-horizon quadratic cost.

The window cost ``J_N = sum_{j} x_j^T Q x_j`` of a stationary zero-mean
Gauss-Markov state sequence is a Gaussian quadratic form. Its mean and second
moment have closed forms through Lyapunov equations, and its full moment
generating function is a product over the eigenvalues of ``Omega Sigma``
(stacked weights times joint window covariance).
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_positive_int, check_square, check_symmetric_psd, check_vector
from .exceptions import NotPsd, OutOfDomain, SingularSigma, SingularW, WindowOutOfRange
from .linalg import eigvals_sym, solve_dlyap_observability, symmetric_sqrt
from .system import joint_state_covariance

__all__ = [
    "MgfSpectrum",
    "CostMoments",
    "empirical_cost",
    "rolling_costs",
    "expected_cost",
    "second_moment",
    "mgf_spectrum",
    "mgf",
    "log_mgf",
    "mgf_general",
    "moments_from_mgf",
    "cost_bound",
]

# relative rounding allowance for negative eigenvalues; strongly non-normal
# loops lose several digits in the joint covariance
CLAMP_TOL = 1e-8


@dataclass(frozen=True, eq=False)
class MgfSpectrum:
    """Eigenvalues of ``Omega Sigma``, sorted descending and clamped at zero."""

    lambdas: np.ndarray
    N: int
    n: int

    def __post_init__(self):
        lam = np.sort(np.asarray(self.lambdas, dtype=float).ravel())[::-1]
        if lam.size == 0:
            raise ValueError("spectrum is empty")
        top = max(lam[0], 0.0)
        if lam[-1] < -CLAMP_TOL * (top if top > 0 else 1.0):
            raise NotPsd(f"spectrum has a negative eigenvalue {lam[-1]:.3e}")
        lam = np.clip(lam, 0.0, None)
        lam.setflags(write=False)
        object.__setattr__(self, "lambdas", lam)

    @property
    def lambda_max(self):
        return float(self.lambdas[0])

    @property
    def xi_max(self):
        """Supremum of the MGF domain, ``1 / (2 lambda_max)``."""
        return np.inf if self.lambda_max == 0 else 0.5 / self.lambda_max

    def scaled(self, c):
        return MgfSpectrum(c * self.lambdas, self.N, self.n)


@dataclass(frozen=True)
class CostMoments:
    mean: float
    second_moment: float
    variance: float


def empirical_cost(traj, Q, k, N):
    """Unnormalized window cost ``sum_{j=k-N+1}^{k} x_j^T Q x_j``."""
    N = check_positive_int(N, "N")
    first = k - N + 1
    if first < traj.start_index or k > traj.end_index:
        raise WindowOutOfRange(
            f"window [{first}, {k}] outside stored states [{traj.start_index}, {traj.end_index}]"
        )
    X = traj.states[first - traj.start_index:k - traj.start_index + 1]
    Q = check_symmetric_psd(Q, "Q", n=X.shape[1])
    return float(np.einsum("ij,jk,ik->", X, Q, X))


def rolling_costs(states, Q, N):
    """Window costs ending at every index ``N-1, ..., len(states)-1``."""
    X = np.asarray(states, dtype=float)
    N = check_positive_int(N, "N")
    stage = np.einsum("ij,jk,ik->i", X, Q, X)
    if len(stage) < N:
        return np.empty(0)
    c = np.concatenate([[0.0], np.cumsum(stage)])
    return c[N:] - c[:-N]


def expected_cost(cl, N):
    """``E[J_N] = N trace(V Xbar)`` with ``A^T Xbar A - Xbar + Q = 0``."""
    N = check_positive_int(N, "N")
    Xq = solve_dlyap_observability(cl.A, cl.Q)
    return float(N * np.trace(cl.V @ Xq))


def second_moment(cl, N):
    """Closed-form ``E[J_N^2]`` of the stationary window cost.

    With ``T_d = (A^d)^T Q A^d``, ``F = sum_{d<N} T_d`` and ``G = sum_{d>=0} T_d``,

        E[J_N^2] = E[J_N]^2 + 4 trace(E X Q X),
        E = N (G - Q/2) + F - sum_{k<N} (A^k)^T G A^k.
    """
    N = check_positive_int(N, "N")
    A, Q, X = cl.A, cl.Q, cl.X_v
    G = solve_dlyap_observability(A, Q)
    F = np.zeros_like(Q)
    tail = np.zeros_like(Q)
    Ak = np.eye(cl.n)
    for _ in range(N):
        F += Ak.T @ Q @ Ak
        tail += Ak.T @ G @ Ak
        Ak = A @ Ak
    E = N * (G - 0.5 * Q) + F - tail
    mean = expected_cost(cl, N)
    return float(mean ** 2 + 4.0 * np.trace(E @ X @ Q @ X))


def mgf_spectrum(cl, N):
    """Spectrum of ``Omega Sigma`` for a window of length ``N``.

    Computed from the symmetric similar matrix ``Omega^1/2 Sigma Omega^1/2``;
    ``Omega`` is block diagonal so its root is one ``n x n`` root.
    """
    N = check_positive_int(N, "N")
    Sigma = joint_state_covariance(cl, N)
    Qh = symmetric_sqrt(cl.Q)
    n = cl.n
    M = np.empty_like(Sigma)
    for i in range(N):
        rows = slice(i * n, (i + 1) * n)
        M[rows] = Qh @ Sigma[rows]
    for j in range(N):
        cols = slice(j * n, (j + 1) * n)
        M[:, cols] = M[:, cols] @ Qh
    return MgfSpectrum(eigvals_sym(0.5 * (M + M.T)), N, n)


def _check_xi(spectrum, xi):
    xi = float(xi)
    if not np.isfinite(xi):
        raise OutOfDomain("xi must be finite")
    if spectrum.lambda_max > 0 and xi >= spectrum.xi_max * (1.0 - 1e-14):
        raise OutOfDomain(f"xi={xi} outside the MGF domain xi < {spectrum.xi_max}")
    return xi


def log_mgf(spectrum, xi):
    """``-1/2 sum_j log(1 - 2 xi lambda_j)``."""
    xi = _check_xi(spectrum, xi)
    return float(-0.5 * np.sum(np.log1p(-2.0 * xi * spectrum.lambdas)))


def mgf(spectrum, xi):
    """Moment generating function of the zero-mean window cost."""
    return float(np.exp(log_mgf(spectrum, xi)))


def mgf_general(mu, Sigma, Omega, xi):
    """MGF of ``z^T Omega z`` for ``z ~ N(mu, Sigma)``, ``Sigma`` positive definite."""
    Sigma = check_symmetric_psd(Sigma, "Sigma")
    m = Sigma.shape[0]
    Omega = check_symmetric_psd(Omega, "Omega", n=m)
    mu = check_vector(mu, "mu", size=m)
    try:
        L = np.linalg.cholesky(Sigma)
    except np.linalg.LinAlgError as exc:
        raise SingularSigma("Sigma is not positive definite") from exc
    lam = np.linalg.eigvalsh(L.T @ Omega @ L)
    spectrum = MgfSpectrum(lam, 1, m)
    xi = _check_xi(spectrum, xi)
    K = np.eye(m) - 2.0 * xi * Omega @ Sigma
    sign, logdet = np.linalg.slogdet(K)
    if sign <= 0:
        raise OutOfDomain("I - 2 xi Omega Sigma is not positive definite")
    w = np.linalg.solve(Sigma, mu)
    quad = mu @ (np.linalg.solve(K, w) - w)
    return float(np.exp(0.5 * quad - 0.5 * logdet))


def moments_from_mgf(spectrum):
    """Mean ``sum lambda`` and second moment ``2 sum lambda^2 + (sum lambda)^2``."""
    lam = spectrum.lambdas
    mean = float(np.sum(lam))
    second = float(2.0 * np.sum(lam ** 2) + mean ** 2)
    return CostMoments(mean=mean, second_moment=second, variance=max(second - mean ** 2, 0.0))


def cost_bound(W, alpha, Q, N):
    """Largest window cost when every state satisfies ``||W^-1 x|| < alpha``."""
    W = check_square(W, "W")
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    N = check_positive_int(N, "N")
    if np.linalg.cond(W) > 1e12:
        raise SingularW("W is singular")
    Q = check_symmetric_psd(Q, "Q", n=W.shape[0])
    return float(alpha ** 2 * N * eigvals_sym(W.T @ Q @ W)[0])
