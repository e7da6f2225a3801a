"""Detection bookkeeping: change size, delays, misfires and delay densities."""

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.integrate import trapezoid

from ._validation import check_matrix, check_square
from .exceptions import NegativeDelay, TooFewSamples, ZeroMarginal
from .linalg import solve_dlyap_controllability

__all__ = [
    "DetectionRecord",
    "DensityEstimate",
    "MisfireRate",
    "h2_norm",
    "system_change_metric",
    "detection_delay",
    "silverman_bandwidth",
    "gaussian_kde_1d",
    "gaussian_kde_2d",
    "conditional_density",
    "column_normalized",
    "wilson_interval",
    "misfire_rate",
]


@dataclass(frozen=True)
class DetectionRecord:
    """One plant change and what the trigger made of it.

    ``detect_step`` is ``None`` when the change was censored, i.e. not
    detected before the next change or the end of the run.
    """

    change_step: int
    delta_sys: float
    detect_step: Optional[int] = None
    diverged: bool = False
    rollout: int = 0

    def __post_init__(self):
        if not self.delta_sys > 0:
            raise ValueError("delta_sys must be positive")

    @property
    def delay(self):
        if self.detect_step is None:
            return None
        return detection_delay(self.change_step, self.detect_step)

    @property
    def censored(self):
        return self.detect_step is None


@dataclass(frozen=True, eq=False)
class DensityEstimate:
    """Density on the grid ``grid_delay x grid_logdelta`` (rows are delays)."""

    grid_delay: np.ndarray
    grid_logdelta: np.ndarray
    values: np.ndarray
    bandwidths: tuple

    def integral(self):
        inner = trapezoid(self.values, self.grid_logdelta, axis=1)
        return float(trapezoid(inner, self.grid_delay))


@dataclass(frozen=True)
class MisfireRate:
    rate: float
    low: float
    high: float
    fires: int
    evaluations: int


def h2_norm(A, G):
    """H2 norm of ``x[k+1] = A x[k] + G w[k]``, ``y = x``, for unit white ``w``."""
    A = check_square(A, "A")
    G = check_matrix(G, "G")
    P = solve_dlyap_controllability(A, G @ G.T)
    return float(np.sqrt(max(np.trace(P), 0.0)))


def system_change_metric(old, new):
    """Ratio of the noise-driven H2 norms after and before a change."""
    return h2_norm(new.A, new.noise_factor) / h2_norm(old.A, old.noise_factor)


def detection_delay(change_step, fire_step):
    if fire_step < change_step:
        raise NegativeDelay(f"fire at {fire_step} precedes change at {change_step}")
    return int(fire_step - change_step)


def silverman_bandwidth(x):
    x = np.asarray(x, dtype=float)
    sd = np.std(x, ddof=1) if x.size > 1 else 0.0
    if sd == 0.0:
        # degenerate sample: fall back to a unit-scale kernel
        sd = max(abs(float(np.mean(x))), 1.0) * 1e-2
    return 1.06 * sd * x.size ** (-0.2)


def _kernel_matrix(grid, samples, h):
    z = (grid[:, None] - samples[None, :]) / h
    return np.exp(-0.5 * z * z) / (h * np.sqrt(2.0 * np.pi))


def _grid(samples, h, points):
    return np.linspace(samples.min() - 3.0 * h, samples.max() + 3.0 * h, points)


def gaussian_kde_1d(samples, grid=None, bandwidth=None, points=128):
    """Gaussian kernel density estimate; returns ``(grid, density)``."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise TooFewSamples("kernel density needs at least two samples")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    grid = _grid(x, h, points) if grid is None else np.asarray(grid, dtype=float)
    return grid, _kernel_matrix(grid, x, h).mean(axis=1)


def gaussian_kde_2d(samples, bandwidths=None, shape=(256, 128)):
    """Product-Gaussian KDE of ``(delay, log10 delta_sys)`` pairs."""
    S = np.asarray(samples, dtype=float).reshape(-1, 2)
    if len(S) < 2:
        raise TooFewSamples("kernel density needs at least two samples")
    t, d = S[:, 0], S[:, 1]
    if bandwidths is None:
        bandwidths = (silverman_bandwidth(t), silverman_bandwidth(d))
    ht, hd = (float(b) for b in bandwidths)
    gt = _grid(t, ht, shape[0])
    gd = _grid(d, hd, shape[1])
    Kt = _kernel_matrix(gt, t, ht)
    Kd = _kernel_matrix(gd, d, hd)
    values = Kt @ Kd.T / len(S)
    return DensityEstimate(grid_delay=gt, grid_logdelta=gd, values=values, bandwidths=(ht, hd))


def conditional_density(joint, marginal):
    """Divide each ``log10 delta_sys`` column of the joint by the marginal."""
    marginal = np.asarray(marginal, dtype=float).ravel()
    if marginal.shape != joint.grid_logdelta.shape:
        raise ValueError("marginal must be evaluated on the joint's log-delta grid")
    if np.any(marginal <= 0.0):
        raise ZeroMarginal("marginal density vanishes on part of the grid")
    return DensityEstimate(
        grid_delay=joint.grid_delay,
        grid_logdelta=joint.grid_logdelta,
        values=joint.values / marginal[None, :],
        bandwidths=joint.bandwidths,
    )


def column_normalized(density):
    """Scale every column so its maximum over the delay axis is one."""
    top = density.values.max(axis=0, keepdims=True)
    top = np.where(top > 0, top, 1.0)
    return DensityEstimate(density.grid_delay, density.grid_logdelta, density.values / top, density.bandwidths)


def wilson_interval(k, n, z=1.959963984540054):
    if n <= 0:
        raise ValueError("need at least one evaluation")
    p = k / n
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n)) / denom
    # the bounds are exact at the extremes; avoid rounding residue there
    low = 0.0 if k == 0 else max(centre - half, 0.0)
    high = 1.0 if k == n else min(centre + half, 1.0)
    return low, high


def misfire_rate(flags):
    """Fraction of fired evaluations with a 95% Wilson interval."""
    flags = np.asarray(list(flags), dtype=bool)
    n = flags.size
    k = int(flags.sum())
    low, high = wilson_interval(k, n)
    return MisfireRate(rate=k / n, low=low, high=high, fires=k, evaluations=n)
