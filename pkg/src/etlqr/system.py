"""Linear-Gaussian plant models, closed loops and trajectory simulation."""

from dataclasses import dataclass
from functools import cached_property
from typing import Optional, Tuple

import numpy as np

from ._validation import (
    check_matrix,
    check_positive_int,
    check_square,
    check_symmetric_psd,
    check_vector,
)
from .exceptions import DimensionCap, GenerationFailed, NonFiniteState, NotStabilizable
from .linalg import (
    is_controllable,
    is_stabilizable,
    lqr_gain,
    solve_dlyap_controllability,
    solve_dlyap_observability,
    spectral_radius,
    symmetric_sqrt,
)

__all__ = [
    "OpenLoopSystem",
    "CostWeights",
    "ClosedLoopSystem",
    "Trajectory",
    "RandomSystemSpec",
    "close_loop",
    "apply_controller",
    "stationary_covariance",
    "joint_state_covariance",
    "sample_stationary_state",
    "simulate",
    "stationary_window_costs",
    "random_system",
    "perturb_system",
    "decorrelation_lag",
    "make_rng",
]

DIVERGENCE_LIMIT = 1e12
JOINT_DIMENSION_CAP = 4000


def _frozen(M):
    M = np.array(M, dtype=float)
    M.setflags(write=False)
    return M


def make_rng(seed):
    """``numpy.random.Generator`` from an int, SeedSequence or Generator."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class OpenLoopSystem:
    """Plant ``x[k+1] = A x[k] + B u[k] + v[k]`` with ``v ~ N(0, V)``.

    ``V_root`` optionally stores the factor ``S`` that generated
    ``V = S S^T``; perturbations act on that factor.
    """

    A: np.ndarray
    B: np.ndarray
    V: np.ndarray
    V_root: Optional[np.ndarray] = None

    def __post_init__(self):
        A = check_square(self.A, "A")
        n = A.shape[0]
        B = check_matrix(self.B, "B")
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape}")
        V = check_symmetric_psd(self.V, "V", n=n)
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "V", _frozen(V))
        if self.V_root is not None:
            S = check_square(self.V_root, "V_root", n=n)
            if not np.allclose(S @ S.T, V, rtol=1e-9, atol=1e-12):
                raise ValueError("V_root @ V_root.T does not reproduce V")
            object.__setattr__(self, "V_root", _frozen(S))
        if not is_stabilizable(A, B):
            raise NotStabilizable("(A, B) is not stabilizable")

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def q(self):
        return self.B.shape[1]

    @property
    def noise_factor(self):
        if self.V_root is not None:
            return self.V_root
        return symmetric_sqrt(self.V)

    def parameter_vector(self):
        """``(A, B, noise_factor)`` flattened into one vector."""
        return np.concatenate([self.A.ravel(), self.B.ravel(), self.noise_factor.ravel()])


@dataclass(frozen=True, eq=False)
class CostWeights:
    Q_lqr: np.ndarray
    R_lqr: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q_lqr", _frozen(check_symmetric_psd(self.Q_lqr, "Q_lqr", definite=True)))
        object.__setattr__(self, "R_lqr", _frozen(check_symmetric_psd(self.R_lqr, "R_lqr", definite=True)))

    @classmethod
    def identity(cls, n, q):
        return cls(np.eye(n), np.eye(q))


@dataclass(frozen=True, eq=False)
class ClosedLoopSystem:
    """Closed loop ``x[k+1] = A x[k] + B u_ref[k] + v[k]`` with stage cost ``x^T Q x``.

    ``A = A_o - B F`` and ``Q = Q_lqr + F^T R_lqr F`` when built by
    :func:`close_loop`. The stationary covariance is computed on first access,
    so an unstable loop can still be simulated.
    """

    A: np.ndarray
    Q: np.ndarray
    V: np.ndarray
    F: Optional[np.ndarray] = None
    B: Optional[np.ndarray] = None

    def __post_init__(self):
        A = check_square(self.A, "A")
        n = A.shape[0]
        object.__setattr__(self, "A", _frozen(A))
        object.__setattr__(self, "Q", _frozen(check_symmetric_psd(self.Q, "Q", n=n)))
        object.__setattr__(self, "V", _frozen(check_symmetric_psd(self.V, "V", n=n)))
        B = np.zeros((n, 1)) if self.B is None else check_matrix(self.B, "B")
        if B.shape[0] != n:
            raise ValueError(f"B must have {n} rows, got {B.shape}")
        F = np.zeros((B.shape[1], n)) if self.F is None else check_matrix(self.F, "F", shape=(B.shape[1], n))
        object.__setattr__(self, "B", _frozen(B))
        object.__setattr__(self, "F", _frozen(F))

    @property
    def n(self):
        return self.A.shape[0]

    @property
    def q(self):
        return self.B.shape[1]

    @property
    def is_stable(self):
        return spectral_radius(self.A) < 1.0

    @cached_property
    def X_v(self):
        return _frozen(solve_dlyap_controllability(self.A, self.V))

    @cached_property
    def noise_factor(self):
        return _frozen(symmetric_sqrt(self.V))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """States ``x[start_index] ... x[start_index + T]`` and inputs ``u[...]``.

    Input ``inputs[k]`` is applied between ``states[k]`` and ``states[k+1]``.
    """

    states: np.ndarray
    inputs: np.ndarray
    seed: Optional[int] = None
    start_index: int = 0

    def __post_init__(self):
        X = np.array(self.states, dtype=float, ndmin=2)
        U = np.array(self.inputs, dtype=float, ndmin=2)
        if U.size == 0:
            U = np.zeros((0, U.shape[1] if U.ndim == 2 and U.shape[1] else 1))
        if len(X) not in (len(U), len(U) + 1):
            raise ValueError("states must have len(inputs) or len(inputs) + 1 rows")
        object.__setattr__(self, "states", _frozen(X))
        object.__setattr__(self, "inputs", _frozen(U))

    @property
    def end_index(self):
        """Time index of the last stored state."""
        return self.start_index + len(self.states) - 1

    def state(self, k):
        return self.states[k - self.start_index]


@dataclass(frozen=True)
class RandomSystemSpec:
    n: int = 5
    q: int = 1
    entry_range: Tuple[float, float] = (-1.0, 1.0)
    beta_range: Tuple[float, float] = (-0.1, 0.1)

    def __post_init__(self):
        check_positive_int(self.n, "n")
        check_positive_int(self.q, "q")
        for name in ("entry_range", "beta_range"):
            lo, hi = getattr(self, name)
            if not lo <= hi:
                raise ValueError(f"{name} must satisfy low <= high, got {(lo, hi)}")
            object.__setattr__(self, name, (float(lo), float(hi)))


def close_loop(sys, weights):
    """LQR-controlled closed loop of ``sys`` under ``weights``."""
    F = lqr_gain(sys.A, sys.B, weights.Q_lqr, weights.R_lqr)
    return apply_controller(sys, F, weights)


def apply_controller(sys, F, weights):
    """Closed loop of ``sys`` under a given gain ``F`` (possibly unstable).

    This is how a plant that has drifted away from the model behaves under the
    model-based controller.
    """
    F = check_matrix(F, "F", shape=(sys.q, sys.n))
    A = sys.A - sys.B @ F
    Q = weights.Q_lqr + F.T @ weights.R_lqr @ F
    return ClosedLoopSystem(A=A, Q=0.5 * (Q + Q.T), V=sys.V, F=F, B=sys.B)


def stationary_covariance(cl):
    """Stationary state covariance ``X`` solving ``A X A^T - X + V = 0``."""
    return cl.X_v


def joint_state_covariance(cl, N, cap=JOINT_DIMENSION_CAP):
    """Covariance of the stacked window ``(x_0, ..., x_{N-1})``.

    Block ``(i, j)`` equals ``A^(i-j) X`` for ``i >= j`` and its transpose
    above the diagonal.
    """
    N = check_positive_int(N, "N")
    n = cl.n
    if N * n > cap:
        raise DimensionCap(f"joint dimension {N * n} exceeds cap {cap}")
    X = cl.X_v
    blocks = [X]
    for _ in range(N - 1):
        blocks.append(cl.A @ blocks[-1])
    Sigma = np.empty((N * n, N * n))
    for i in range(N):
        for j in range(i + 1):
            blk = blocks[i - j]
            Sigma[i * n:(i + 1) * n, j * n:(j + 1) * n] = blk
            Sigma[j * n:(j + 1) * n, i * n:(i + 1) * n] = blk.T
    return Sigma


def sample_stationary_state(cl, rng):
    rng = make_rng(rng)
    return symmetric_sqrt(cl.X_v) @ rng.standard_normal(cl.n)


def _reference_array(u_ref, steps, q):
    if u_ref is None:
        return None
    if callable(u_ref):
        r = np.array([np.atleast_1d(u_ref(k)) for k in range(steps)], dtype=float)
    else:
        r = np.array(u_ref, dtype=float)
    r = r.reshape(steps, q) if r.size == steps * q else None
    if r is None:
        raise ValueError(f"u_ref must provide {steps} inputs of size {q}")
    return r


def simulate(cl, x0, steps, rng, u_ref=None, start_index=0):
    """Roll out the closed loop for ``steps`` transitions.

    ``x[k+1] = A x[k] + B u_ref[k] + v[k]`` with ``v[k] ~ N(0, V)`` drawn as
    ``noise_factor @ z`` for standard normal ``z``. The recorded inputs are the
    applied ``u[k] = -F x[k] + u_ref[k]``.

    Raises
    ------
    NonFiniteState
        If any state entry exceeds ``1e12`` in magnitude; the partial
        trajectory is attached to the exception.
    """
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = make_rng(rng)
    steps = int(steps)
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    n, q = cl.n, cl.q
    x = check_vector(x0, "x0", size=n)
    r = _reference_array(u_ref, steps, q)
    noise = rng.standard_normal((steps, n)) @ cl.noise_factor.T
    A, B, F = cl.A, cl.B, cl.F
    states = np.empty((steps + 1, n))
    states[0] = x
    for k in range(steps):
        xk = states[k]
        nxt = A @ xk + noise[k]
        if r is not None:
            nxt += B @ r[k]
        if not np.all(np.abs(nxt) <= DIVERGENCE_LIMIT):
            partial = _pack(states[:k + 1], F, r, k, seed, start_index)
            raise NonFiniteState(f"state diverged at step {start_index + k + 1}", partial, start_index + k + 1)
        states[k + 1] = nxt
    return _pack(states, F, r, steps, seed, start_index)


def _pack(states, F, r, steps, seed, start_index):
    inputs = -states[:steps] @ F.T
    if r is not None:
        inputs = inputs + r[:steps]
    return Trajectory(states=states.copy(), inputs=inputs, seed=seed, start_index=start_index)


def stationary_window_costs(cl, N, M, rng, Q=None, batch=20000):
    """Costs of ``M`` independent stationary windows of length ``N``.

    Each window starts from a fresh draw of the stationary distribution, so
    the samples are mutually independent. ``Q`` defaults to ``cl.Q``.
    """
    rng = make_rng(rng)
    Q = cl.Q if Q is None else np.asarray(Q, dtype=float)
    root = symmetric_sqrt(cl.X_v)
    L = cl.noise_factor
    out = np.empty(M)
    for lo in range(0, M, batch):
        m = min(batch, M - lo)
        X = rng.standard_normal((m, cl.n)) @ root.T
        J = np.einsum("ij,jk,ik->i", X, Q, X)
        for _ in range(N - 1):
            X = X @ cl.A.T + rng.standard_normal((m, cl.n)) @ L.T
            J += np.einsum("ij,jk,ik->i", X, Q, X)
        out[lo:lo + m] = J
    return out


def _sample_parameters(spec, rng):
    lo, hi = spec.entry_range
    A = np.eye(spec.n) + rng.uniform(lo, hi, (spec.n, spec.n))
    B = rng.uniform(lo, hi, (spec.n, spec.q))
    S = rng.uniform(lo, hi, (spec.n, spec.n))
    return A, B, S


def random_system(spec=None, rng=None, max_tries=1000):
    """Random plant with ``A - I``, ``B`` and ``sqrt(V)`` uniform elementwise."""
    spec = spec or RandomSystemSpec()
    rng = make_rng(rng)
    for _ in range(max_tries):
        A, B, S = _sample_parameters(spec, rng)
        if is_stabilizable(A, B):
            return OpenLoopSystem(A=A, B=B, V=S @ S.T, V_root=S)
    raise GenerationFailed(f"no stabilizable system after {max_tries} draws")


def perturb_system(sys, spec=None, rng=None, max_tries=1000, accept=None, return_beta=False):
    """Move ``sys`` a random distance ``|beta|`` towards a fresh random system.

    The increment lives in the stacked ``(A, B, sqrt(V))`` parameter space and
    has Euclidean norm ``|beta|``, ``beta ~ U(beta_range)``. Increments that
    leave the system uncontrollable, or that ``accept(new_system)`` rejects,
    are redrawn. Stability is not enforced.
    """
    spec = spec or RandomSystemSpec(n=sys.n, q=sys.q)
    if (spec.n, spec.q) != (sys.n, sys.q):
        raise ValueError("spec dimensions do not match the system")
    rng = make_rng(rng)
    S_old = sys.noise_factor
    old = np.concatenate([sys.A.ravel(), sys.B.ravel(), S_old.ravel()])
    n, q = sys.n, sys.q
    for _ in range(max_tries):
        A, B, S = _sample_parameters(spec, rng)
        beta = rng.uniform(*spec.beta_range)
        diff = np.concatenate([A.ravel(), B.ravel(), S.ravel()]) - old
        norm = np.linalg.norm(diff)
        if norm == 0.0:
            continue
        new = old + beta * diff / norm
        A_new = new[:n * n].reshape(n, n)
        B_new = new[n * n:n * n + n * q].reshape(n, q)
        S_new = new[n * n + n * q:].reshape(n, n)
        if not is_controllable(A_new, B_new):
            continue
        candidate = OpenLoopSystem(A=A_new, B=B_new, V=S_new @ S_new.T, V_root=S_new)
        if accept is not None and not accept(candidate):
            continue
        return (candidate, beta) if return_beta else candidate
    raise GenerationFailed(f"no admissible perturbation after {max_tries} draws")


def decorrelation_lag(cl, epsilon, max_lag=10**6):
    """Smallest lag ``r0 >= 1`` with ``max |A^r X| < epsilon`` for every ``r >= r0``.

    The tail is certified with the contraction of ``A`` in the norm induced by
    the solution of ``A^T P A - P + I = 0``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    A, X = cl.A, cl.X_v
    P = solve_dlyap_observability(A, np.eye(cl.n))
    P_half = symmetric_sqrt(P)
    contraction = np.linalg.norm(P_half @ A @ np.linalg.inv(P_half), 2)
    gain = np.sqrt(np.linalg.cond(P)) * np.linalg.norm(X, 2)
    last_fail = 0
    M = X
    for r in range(1, max_lag + 1):
        M = A @ M
        if np.max(np.abs(M)) >= epsilon:
            last_fail = r
        if gain * contraction ** r < epsilon:
            return last_fail + 1
    raise ValueError(f"no decorrelation lag below {max_lag}")
