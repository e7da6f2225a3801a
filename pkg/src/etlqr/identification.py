"""Model updates after a trigger fires.

Simulation studies copy the true plant (``oracle_update``); otherwise a
least-squares fit on an excited trajectory provides ``(A, B)`` and the
residual covariance provides ``V``.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_positive_int
from .exceptions import OutOfRange, RankDeficient, TooFewSamples
from .system import OpenLoopSystem, Trajectory, make_rng

__all__ = [
    "ExcitationSignal",
    "IdentifiedModel",
    "oracle_update",
    "chirp",
    "chirp_signal",
    "excitation",
    "ols_estimate",
    "residual_covariance",
    "LeastSquaresIdentifier",
]

RANK_RTOL = 1e-8


@dataclass(frozen=True)
class ExcitationSignal:
    kind: str = "chirp"
    amplitude: float = 1.0
    f_start: float = 0.01
    f_end: float = 0.2
    duration: int = 2000

    def __post_init__(self):
        if self.kind not in ("chirp", "white"):
            raise ValueError("kind must be 'chirp' or 'white'")
        if not self.amplitude > 0:
            raise ValueError("amplitude must be positive")
        for name in ("f_start", "f_end"):
            f = getattr(self, name)
            if not 0.0 < f < 0.5:
                raise ValueError(f"{name} must lie in (0, 0.5), got {f}")
        check_positive_int(self.duration, "duration")


@dataclass(frozen=True, eq=False)
class IdentifiedModel:
    A_hat: np.ndarray
    B_hat: np.ndarray
    V_hat: np.ndarray
    sample_count: int = 0
    residual_rms: float = 0.0

    def to_system(self):
        return OpenLoopSystem(A=self.A_hat, B=self.B_hat, V=self.V_hat)


def oracle_update(truth):
    """Exact copy of the true plant."""
    return IdentifiedModel(
        A_hat=np.array(truth.A),
        B_hat=np.array(truth.B),
        V_hat=np.array(truth.V),
        sample_count=0,
        residual_rms=0.0,
    )


def _instantaneous_frequency(signal):
    k = np.arange(signal.duration)
    half = signal.duration / 2.0
    up = signal.f_start + (signal.f_end - signal.f_start) * k / half
    down = signal.f_end - (signal.f_end - signal.f_start) * (k - half) / half
    return np.where(k < half, up, down)


def chirp_signal(signal):
    """Whole up-then-down chirp, ``amplitude * sin(2 pi sum_{j<k} f_j)``."""
    f = _instantaneous_frequency(signal)
    phase = 2.0 * np.pi * np.concatenate([[0.0], np.cumsum(f[:-1])])
    return signal.amplitude * np.sin(phase)


def chirp(signal, k):
    if not 0 <= k < signal.duration:
        raise OutOfRange(f"step {k} outside chirp of duration {signal.duration}")
    return float(chirp_signal(signal)[k])


def excitation(signal, q=1, rng=None):
    """Reference input array of shape ``(duration, q)``.

    A chirp drives every channel with the same waveform; white excitation
    draws independent Gaussian samples scaled by ``amplitude``.
    """
    if signal.kind == "chirp":
        return np.repeat(chirp_signal(signal)[:, None], q, axis=1)
    rng = make_rng(rng)
    return signal.amplitude * rng.standard_normal((signal.duration, q))


def _regression(traj):
    X = np.asarray(traj.states)
    U = np.asarray(traj.inputs)
    m = min(len(X) - 1, len(U))
    return X[:m], U[:m], X[1:m + 1]


def _fit_least_squares(X, U, Y):
    n, q = X.shape[1], U.shape[1]
    m = len(X)
    if m < 10 * (n + q):
        raise TooFewSamples(f"need at least {10 * (n + q)} transitions, got {m}")
    Z = np.hstack([X, U])
    Uz, s, Vt = np.linalg.svd(Z, full_matrices=False)
    if s[0] == 0.0 or s[-1] <= RANK_RTOL * s[0]:
        raise RankDeficient("regressors are not sufficiently exciting")
    theta = Vt.T @ ((Uz.T @ Y) / s[:, None])
    return theta[:n].T, theta[n:].T


def residual_covariance(traj, model):
    """Empirical covariance (divisor ``m - 1``) of one-step prediction residuals."""
    X, U, Y = _regression(traj)
    R = Y - X @ np.asarray(model.A_hat).T - U @ np.asarray(model.B_hat).T
    m, n = R.shape
    if m < n + 1:
        raise TooFewSamples(f"need at least {n + 1} residuals, got {m}")
    C = np.cov(R, rowvar=False, ddof=1).reshape(n, n)
    return 0.5 * (C + C.T)


def ols_estimate(traj):
    """Least-squares fit of ``x[k+1] ~ A x[k] + B u[k]`` with residual noise."""
    X, U, Y = _regression(traj)
    A_hat, B_hat = _fit_least_squares(X, U, Y)
    R = Y - X @ A_hat.T - U @ B_hat.T
    n = X.shape[1]
    V_hat = np.cov(R, rowvar=False, ddof=1).reshape(n, n)
    return IdentifiedModel(
        A_hat=A_hat,
        B_hat=B_hat,
        V_hat=0.5 * (V_hat + V_hat.T),
        sample_count=len(X),
        residual_rms=float(np.sqrt(np.mean(R ** 2))),
    )


class LeastSquaresIdentifier(BaseEstimator):
    """Estimator wrapper around :func:`ols_estimate`.

    ``fit(states, inputs)`` takes ``T + 1`` (or ``T``) state rows and ``T``
    input rows; ``predict(states, inputs)`` gives one-step-ahead predictions.
    """

    def fit(self, X, y):
        X = check_array(X, dtype=float)
        U = check_array(y, dtype=float, ensure_2d=False)
        U = U.reshape(len(U), -1)
        model = ols_estimate(Trajectory(states=X, inputs=U))
        self.A_ = model.A_hat
        self.B_ = model.B_hat
        self.V_ = model.V_hat
        self.residual_rms_ = model.residual_rms
        self.n_features_in_ = X.shape[1]
        self.model_ = model
        return self

    def predict(self, X, y):
        check_is_fitted(self, "model_")
        X = check_array(X, dtype=float)
        U = np.asarray(y, dtype=float).reshape(len(X), -1)
        return X @ self.A_.T + U @ self.B_.T
