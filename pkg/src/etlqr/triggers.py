"""Learning triggers.

Two families decide whether observed window costs are still consistent with
the model that designed the controller:

* the mean-based trigger compares a sum of ``L`` spaced window costs with
  ``L E[J_N]`` under a Hoeffding threshold (plus relative and second-moment
  variants);
* the distribution-based trigger checks a single window cost against a
  Chernoff confidence interval ``(kappa_minus, kappa_plus)`` built from the
  full moment generating function.

Threshold computations are pure functions. :class:`HoeffdingMonitor` and
:class:`ChernoffMonitor` are the stateful per-step runtimes, and
:class:`HoeffdingTrigger` / :class:`ChernoffTrigger` wrap everything as
scikit-learn style estimators fitted on a closed-loop model.
"""

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import check_confidence, check_positive_int, check_square
from .cost import _check_xi, cost_bound, expected_cost, mgf_spectrum, rolling_costs, second_moment
from .exceptions import DegenerateSpectrum, InsufficientHistory, LengthMismatch, OutOfDomain, ZeroExpectedCost
from .linalg import symmetric_sqrt

__all__ = [
    "HoeffdingConfig",
    "ChernoffConfig",
    "ChernoffThresholds",
    "TriggerDecision",
    "summation_set",
    "hoeffding_multiplier",
    "hoeffding_threshold",
    "hoeffding_statistic",
    "relative_threshold",
    "relative_statistic",
    "second_moment_threshold",
    "second_moment_statistic",
    "chi",
    "chernoff_thresholds",
    "HoeffdingMonitor",
    "ChernoffMonitor",
    "HoeffdingTrigger",
    "ChernoffTrigger",
]

HOEFFDING_KINDS = ("mean", "relative", "second_moment")


@dataclass(frozen=True, eq=False)
class HoeffdingConfig:
    """Window ``N``, gap ``r``, sample count ``L``, level ``eta``, state bound ``(W, alpha)``."""

    N: int
    r: int
    L: int
    eta: float
    W: np.ndarray
    alpha: float

    def __post_init__(self):
        for name in ("N", "r", "L"):
            check_positive_int(getattr(self, name), name)
        check_confidence(self.eta)
        W = check_square(self.W, "W")
        if np.linalg.cond(W) > 1e12:
            raise ValueError("W must be invertible")
        object.__setattr__(self, "W", W)
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    @property
    def spacing(self):
        return self.N + self.r

    @property
    def history(self):
        """Number of most recent states one evaluation needs."""
        return self.L * (self.N + self.r) - self.r


@dataclass(frozen=True)
class ChernoffConfig:
    N: int
    eta: float
    dwell: int = 1

    def __post_init__(self):
        check_positive_int(self.N, "N")
        check_confidence(self.eta)
        check_positive_int(self.dwell, "dwell")


@dataclass(frozen=True)
class ChernoffThresholds:
    kappa_minus: float
    kappa_plus: float
    xi_minus: float
    xi_plus: float

    def __post_init__(self):
        if not (np.isfinite(self.kappa_minus) and np.isfinite(self.kappa_plus)):
            raise ValueError("thresholds must be finite")
        if not self.kappa_minus < self.kappa_plus or self.kappa_plus <= 0:
            raise ValueError("thresholds must satisfy 0 < kappa_plus and kappa_minus < kappa_plus")

    def contains(self, cost):
        return self.kappa_minus < cost < self.kappa_plus

    def scaled(self, c):
        return ChernoffThresholds(c * self.kappa_minus, c * self.kappa_plus, self.xi_minus / c, self.xi_plus / c)


@dataclass(frozen=True)
class TriggerDecision:
    """Outcome of one evaluation. ``statistic`` is NaN while history is insufficient."""

    statistic: float
    fired: bool
    violation_side: str = "none"
    ready: bool = True


def summation_set(k, cfg, start=0):
    """End indices ``k - (N + r) i`` of the ``L`` spaced cost windows."""
    oldest = k - cfg.spacing * (cfg.L - 1) - cfg.N + 1
    if oldest < start:
        raise InsufficientHistory(f"need states from {oldest}, history starts at {start}")
    return [k - cfg.spacing * i for i in range(cfg.L)]


def hoeffding_multiplier(L, eta):
    """``sqrt(-(L / 2) ln(eta / 2))``."""
    return math.sqrt(-0.5 * L * math.log(eta / 2.0))


def hoeffding_threshold(cfg, Q):
    return cost_bound(cfg.W, cfg.alpha, Q, cfg.N) * hoeffding_multiplier(cfg.L, cfg.eta)


def hoeffding_statistic(costs, expected, L=None):
    costs = np.asarray(costs, dtype=float).ravel()
    if L is not None and costs.size != L:
        raise LengthMismatch(f"expected {L} costs, got {costs.size}")
    return float(abs(np.sum(costs) - costs.size * expected))


def relative_threshold(cfg, Q, expected):
    if not expected > 0:
        raise ZeroExpectedCost("relative trigger needs a positive expected cost")
    return hoeffding_threshold(cfg, Q) / expected


def relative_statistic(costs, expected, L=None):
    """``|L - sum(costs) / E[J_N]|``, the mean statistic divided by ``E[J_N]``."""
    if not expected > 0:
        raise ZeroExpectedCost("relative trigger needs a positive expected cost")
    return hoeffding_statistic(costs, expected, L) / expected


def second_moment_threshold(cfg, Q):
    bound = cost_bound(cfg.W, cfg.alpha, Q, cfg.N)
    return bound ** 2 * hoeffding_multiplier(cfg.L, cfg.eta)


def second_moment_statistic(costs, expected_sq, L=None):
    costs = np.asarray(costs, dtype=float).ravel()
    return hoeffding_statistic(costs ** 2, expected_sq, L)


def chi(xi, spectrum, eta):
    """Chernoff objective ``(log M(xi) - ln(eta / 2)) / xi``."""
    if xi == 0:
        raise OutOfDomain("chi is undefined at xi = 0")
    xi = _check_xi(spectrum, xi)
    log_m = -0.5 * np.sum(np.log1p(-2.0 * xi * spectrum.lambdas))
    return float((log_m - math.log(eta / 2.0)) / xi)


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_minimize(f, a, b, rtol=1e-10, max_iter=500):
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    for _ in range(max_iter):
        if b - a <= rtol * max(abs(a), abs(b), 1e-300):
            break
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return (c, fc) if fc < fd else (d, fd)


def _upper_threshold(spectrum, eta):
    xi_max = spectrum.xi_max
    delta = 1e-9 / spectrum.lambda_max
    xi, value = _golden_minimize(lambda x: chi(x, spectrum, eta), delta, xi_max - delta)
    return xi, value


def _lower_threshold(spectrum, eta, span=30.0, grid=121):
    # xi = -exp(t) / (2 lambda_max); maximize chi over t
    scale = -0.5 / spectrum.lambda_max

    def neg_chi(t):
        return -chi(scale * math.exp(t), spectrum, eta)

    lo, hi = -span, span
    for _ in range(10):
        ts = np.linspace(lo, hi, grid)
        vals = np.array([neg_chi(t) for t in ts])
        i = int(np.argmin(vals))
        if 0 < i < grid - 1:
            t, v = _golden_minimize(neg_chi, ts[i - 1], ts[i + 1], rtol=1e-12)
            return scale * math.exp(t), -v
        width = hi - lo
        lo, hi = (lo - width, lo + 1.0) if i == 0 else (hi - 1.0, hi + width)
    t = ts[i]
    return scale * math.exp(t), -vals[i]


def chernoff_thresholds(spectrum, eta):
    """Chernoff confidence interval for the window cost.

    ``kappa_plus`` minimizes ``chi`` over ``(0, 1/(2 lambda_max))`` where it is
    strictly convex; ``kappa_minus`` maximizes it over ``xi < 0`` and is
    clamped at zero. A suboptimal optimizer result only widens the interval,
    so both sides stay valid bounds.
    """
    eta = check_confidence(eta)
    if not spectrum.lambda_max > 0:
        raise DegenerateSpectrum("spectrum has no positive eigenvalue")
    xi_plus, kappa_plus = _upper_threshold(spectrum, eta)
    xi_minus, kappa_minus = _lower_threshold(spectrum, eta)
    return ChernoffThresholds(
        kappa_minus=max(kappa_minus, 0.0),
        kappa_plus=kappa_plus,
        xi_minus=xi_minus,
        xi_plus=xi_plus,
    )


class _StageBuffer:
    """Ring buffer of the last ``N`` stage costs ``x^T Q x``."""

    def __init__(self, N):
        self.N = N
        self.values = np.zeros(N)
        self.count = 0

    def push(self, value):
        self.values[self.count % self.N] = value
        self.count += 1

    @property
    def full(self):
        return self.count >= self.N

    def window_cost(self):
        return float(self.values.sum())

    def clear(self):
        self.values[:] = 0.0
        self.count = 0


class ChernoffMonitor:
    """Per-step runtime of the Chernoff trigger.

    Fires once the window cost has been outside ``(kappa_minus, kappa_plus)``
    for ``dwell`` consecutive evaluations. After a firing the history is
    cleared, so the next evaluation needs ``N`` fresh states.
    """

    def __init__(self, Q, thresholds, config):
        self.Q = np.asarray(Q, dtype=float)
        self.thresholds = thresholds
        self.config = config
        self._stage = _StageBuffer(config.N)
        self._run = 0
        self.last_cost = math.nan

    def reset(self, Q=None, thresholds=None):
        if Q is not None:
            self.Q = np.asarray(Q, dtype=float)
        if thresholds is not None:
            self.thresholds = thresholds
        self._stage.clear()
        self._run = 0
        self.last_cost = math.nan

    def observe(self, cost):
        """Evaluate one window cost sample."""
        th = self.thresholds
        if cost <= th.kappa_minus:
            side = "low"
        elif cost >= th.kappa_plus:
            side = "high"
        else:
            side = "none"
        self._run = self._run + 1 if side != "none" else 0
        fired = self._run >= self.config.dwell
        if fired:
            self.reset()
        return TriggerDecision(statistic=float(cost), fired=fired, violation_side=side)

    def step(self, x):
        self._stage.push(float(x @ self.Q @ x))
        if not self._stage.full:
            return TriggerDecision(statistic=math.nan, fired=False, ready=False)
        cost = self._stage.window_cost()
        decision = self.observe(cost)
        self.last_cost = cost
        return decision


class HoeffdingMonitor:
    """Per-step runtime of the mean-based triggers.

    Keeps window costs for the last ``L (N + r) - r`` states and evaluates the
    statistic at every step once that history is complete.
    """

    def __init__(self, Q, config, kappa, expected, kind="mean"):
        if kind not in HOEFFDING_KINDS:
            raise ValueError(f"kind must be one of {HOEFFDING_KINDS}")
        self.Q = np.asarray(Q, dtype=float)
        self.config = config
        self.kappa = float(kappa)
        self.expected = float(expected)
        self.kind = kind
        if kind == "relative" and not self.expected > 0:
            raise ZeroExpectedCost("relative trigger needs a positive expected cost")
        self._stage = _StageBuffer(config.N)
        self._size = config.spacing * (config.L - 1) + 1
        self._windows = np.zeros(self._size)
        self._offsets = config.spacing * np.arange(config.L)
        self._count = 0
        self.last_cost = math.nan

    def reset(self, Q=None, expected=None, kappa=None):
        if Q is not None:
            self.Q = np.asarray(Q, dtype=float)
        if expected is not None:
            self.expected = float(expected)
        if kappa is not None:
            self.kappa = float(kappa)
        self._stage.clear()
        self._windows[:] = 0.0
        self._count = 0
        self.last_cost = math.nan

    def statistic(self, costs):
        if self.kind == "mean":
            return hoeffding_statistic(costs, self.expected)
        if self.kind == "relative":
            return relative_statistic(costs, self.expected)
        return second_moment_statistic(costs, self.expected)

    def step(self, x):
        self._stage.push(float(x @ self.Q @ x))
        if not self._stage.full:
            return TriggerDecision(statistic=math.nan, fired=False, ready=False)
        pos = self._count % self._size
        cost = self._stage.window_cost()
        self._windows[pos] = cost
        self._count += 1
        if self._count < self._size:
            self.last_cost = cost
            return TriggerDecision(statistic=math.nan, fired=False, ready=False)
        costs = self._windows[(pos - self._offsets) % self._size]
        psi = self.statistic(costs)
        target = self.config.L * self.expected
        total = np.sum(costs ** 2) if self.kind == "second_moment" else np.sum(costs)
        side = "high" if total > target else "low"
        fired = psi >= self.kappa
        if fired:
            self.reset()
        self.last_cost = cost
        return TriggerDecision(statistic=psi, fired=fired, violation_side=side if fired else "none")


def _as_states(X, n):
    X = check_array(X, ensure_2d=True, dtype=float)
    if X.shape[1] != n:
        raise ValueError(f"expected states with {n} columns, got {X.shape[1]}")
    return X


class ChernoffTrigger(BaseEstimator):
    """Distribution-based learning trigger as an estimator.

    ``fit`` takes a :class:`~etlqr.system.ClosedLoopSystem` (the model) and
    computes the Chernoff interval for window costs of length ``horizon``.
    ``decision_function`` maps a state trajectory to its window costs and
    ``predict`` to the learning flag of each window.

    Parameters
    ----------
    horizon : int
        Window length ``N``.
    eta : float
        Total false-alarm budget per window, split evenly over both tails.
    dwell : int
        Consecutive violating windows required before ``predict`` flags.
    """

    def __init__(self, horizon=200, eta=0.01, dwell=1):
        self.horizon = horizon
        self.eta = eta
        self.dwell = dwell

    def fit(self, X, y=None):
        cfg = ChernoffConfig(N=self.horizon, eta=self.eta, dwell=self.dwell)
        self.config_ = cfg
        self.Q_ = np.asarray(X.Q)
        self.n_features_in_ = X.n
        self.spectrum_ = mgf_spectrum(X, cfg.N)
        self.thresholds_ = chernoff_thresholds(self.spectrum_, cfg.eta)
        self.kappa_minus_ = self.thresholds_.kappa_minus
        self.kappa_plus_ = self.thresholds_.kappa_plus
        self.expected_cost_ = float(np.sum(self.spectrum_.lambdas))
        return self

    def decision_function(self, X):
        """Window costs ``J_N(k)`` for ``k = N-1, ..., len(X)-1``."""
        check_is_fitted(self, "thresholds_")
        return rolling_costs(_as_states(X, self.n_features_in_), self.Q_, self.horizon)

    def predict(self, X):
        costs = self.decision_function(X)
        outside = (costs <= self.kappa_minus_) | (costs >= self.kappa_plus_)
        if self.dwell == 1:
            return outside.astype(int)
        run = np.zeros(len(costs), dtype=int)
        count = 0
        for i, o in enumerate(outside):
            count = count + 1 if o else 0
            run[i] = count
        return (run >= self.dwell).astype(int)

    def monitor(self):
        check_is_fitted(self, "thresholds_")
        return ChernoffMonitor(self.Q_, self.thresholds_, self.config_)


class HoeffdingTrigger(BaseEstimator):
    """Mean-based learning trigger as an estimator.

    Parameters
    ----------
    horizon, gap, n_samples : int
        Window length ``N``, decorrelation gap ``r`` and number of windows ``L``.
    eta : float
        Confidence level.
    alpha : float
        State bound radius: states are assumed to satisfy ``||W^-1 x|| < alpha``.
    W : array_like, optional
        State bound shape. Defaults to the symmetric root of the model's
        stationary covariance, making ``alpha`` a bound in standard deviations.
    kind : {"mean", "relative", "second_moment"}
        Statistic to monitor.
    """

    def __init__(self, horizon=60, gap=60, n_samples=20, eta=0.25, alpha=18.0, W=None, kind="mean"):
        self.horizon = horizon
        self.gap = gap
        self.n_samples = n_samples
        self.eta = eta
        self.alpha = alpha
        self.W = W
        self.kind = kind

    def fit(self, X, y=None):
        if self.kind not in HOEFFDING_KINDS:
            raise ValueError(f"kind must be one of {HOEFFDING_KINDS}")
        W = symmetric_sqrt(X.X_v) if self.W is None else np.asarray(self.W, dtype=float)
        cfg = HoeffdingConfig(N=self.horizon, r=self.gap, L=self.n_samples, eta=self.eta, W=W, alpha=self.alpha)
        self.config_ = cfg
        self.Q_ = np.asarray(X.Q)
        self.n_features_in_ = X.n
        self.expected_cost_ = expected_cost(X, cfg.N)
        if self.kind == "mean":
            self.kappa_ = hoeffding_threshold(cfg, self.Q_)
            self.target_ = self.expected_cost_
        elif self.kind == "relative":
            self.kappa_ = relative_threshold(cfg, self.Q_, self.expected_cost_)
            self.target_ = self.expected_cost_
        else:
            self.kappa_ = second_moment_threshold(cfg, self.Q_)
            self.target_ = second_moment(X, cfg.N)
        return self

    def decision_function(self, X):
        """Statistic at every index with a complete history, oldest first."""
        check_is_fitted(self, "kappa_")
        cfg = self.config_
        costs = rolling_costs(_as_states(X, self.n_features_in_), self.Q_, cfg.N)
        span = cfg.spacing * (cfg.L - 1)
        if len(costs) <= span:
            return np.empty(0)
        idx = np.arange(span, len(costs))[:, None] - cfg.spacing * np.arange(cfg.L)[None, :]
        sel = costs[idx]
        L = cfg.L
        if self.kind == "second_moment":
            return np.abs(np.sum(sel ** 2, axis=1) - L * self.target_)
        psi = np.abs(np.sum(sel, axis=1) - L * self.target_)
        return psi / self.target_ if self.kind == "relative" else psi

    def predict(self, X):
        return (self.decision_function(X) >= self.kappa_).astype(int)

    def monitor(self):
        check_is_fitted(self, "kappa_")
        return HoeffdingMonitor(self.Q_, self.config_, self.kappa_, self.target_, kind=self.kind)
