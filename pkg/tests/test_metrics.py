import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.integrate import trapezoid

from etlqr.exceptions import NegativeDelay, NotSchurStable, TooFewSamples, ZeroMarginal
from etlqr.metrics import (
    DensityEstimate,
    DetectionRecord,
    column_normalized,
    conditional_density,
    detection_delay,
    gaussian_kde_1d,
    gaussian_kde_2d,
    h2_norm,
    misfire_rate,
    silverman_bandwidth,
    system_change_metric,
    wilson_interval,
)
from etlqr.system import ClosedLoopSystem, simulate

from conftest import lqr_random_loop, random_closed_loop, scalar_loop


def test_h2_norm_examples():
    assert h2_norm(np.zeros((2, 2)), np.eye(2)) == pytest.approx(math.sqrt(2), rel=1e-12)
    assert h2_norm([[0.5]], [[1.0]]) == pytest.approx(1.1547, abs=1e-4)
    assert h2_norm([[0.5]], [[1.0]]) == pytest.approx(math.sqrt(4 / 3), rel=1e-12)
    assert h2_norm(np.eye(2) * 0.3, np.zeros((2, 2))) == 0.0
    with pytest.raises(NotSchurStable):
        h2_norm([[1.2]], [[1.0]])


def test_h2_norm_monte_carlo():
    cl = lqr_random_loop(4, n=3)
    m = 4000
    rng = np.random.default_rng(1)
    sq = np.empty(m)
    for i in range(m):
        # y = x driven by unit white noise through the noise factor, started at rest
        traj = simulate(cl, np.zeros(3), 80, rng)
        sq[i] = traj.states[-1] @ traj.states[-1]
    est, se = sq.mean(), sq.std(ddof=1) / math.sqrt(m)
    h2 = h2_norm(cl.A, cl.noise_factor)
    assert abs(est - h2 ** 2) <= 3 * se


def test_h2_squared_is_trace_of_stationary_covariance(rng):
    for _ in range(10):
        cl = random_closed_loop(rng, 4)
        assert h2_norm(cl.A, cl.noise_factor) ** 2 == pytest.approx(np.trace(cl.X_v), rel=1e-9)


def test_system_change_metric_examples():
    assert system_change_metric(scalar_loop(0.5), scalar_loop(0.5)) == pytest.approx(1.0, abs=1e-12)
    assert system_change_metric(scalar_loop(0.5, v=1.0), scalar_loop(0.5, v=4.0)) == pytest.approx(2.0, rel=1e-12)
    assert system_change_metric(scalar_loop(0.5), scalar_loop(0.8)) == pytest.approx(1.4434, abs=1e-4)
    with pytest.raises(NotSchurStable):
        system_change_metric(scalar_loop(0.5), scalar_loop(1.1))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), c=st.floats(0.05, 20.0))
def test_change_metric_noise_scaling(seed, c):
    cl = random_closed_loop(np.random.default_rng(seed), 3)
    scaled = ClosedLoopSystem(A=cl.A, Q=cl.Q, V=c * c * cl.V)
    assert system_change_metric(cl, scaled) == pytest.approx(c, rel=1e-10)


def test_detection_delay():
    assert detection_delay(7, 7) == 0
    assert detection_delay(10000, 12480) == 2480
    with pytest.raises(NegativeDelay):
        detection_delay(10, 9)


def test_detection_record():
    r = DetectionRecord(change_step=10000, delta_sys=1.2, detect_step=12480)
    assert r.delay == 2480 and not r.censored
    c = DetectionRecord(change_step=10000, delta_sys=0.9)
    assert c.delay is None and c.censored
    with pytest.raises(ValueError):
        DetectionRecord(change_step=0, delta_sys=0.0)


def test_silverman_bandwidth():
    x = np.arange(10.0)
    assert silverman_bandwidth(x) == pytest.approx(1.06 * np.std(x, ddof=1) * 10 ** -0.2)
    assert silverman_bandwidth(np.full(5, 3.0)) > 0


def test_kde_1d_normal_sup_norm():
    x = np.random.default_rng(2).standard_normal(10000)
    grid, dens = gaussian_kde_1d(x, grid=np.linspace(-4, 4, 401))
    assert np.max(np.abs(dens - stats.norm.pdf(grid))) < 0.02


def test_kde_2d_normalization_and_normal_oracle():
    rng = np.random.default_rng(3)
    S = rng.standard_normal((10000, 2))
    est = gaussian_kde_2d(S)
    assert est.values.shape == (256, 128)
    assert np.all(est.values >= 0)
    assert est.integral() == pytest.approx(1.0, abs=0.01)
    truth = np.outer(stats.norm.pdf(est.grid_delay), stats.norm.pdf(est.grid_logdelta))
    assert np.max(np.abs(est.values - truth)) < 0.02


def test_kde_point_mass():
    S = np.array([[100.0, 0.0], [100.0, 0.0]])
    est = gaussian_kde_2d(S, bandwidths=(1e-3, 1e-4))
    i, j = np.unravel_index(np.argmax(est.values), est.values.shape)
    assert abs(est.grid_delay[i] - 100.0) <= np.diff(est.grid_delay)[0]
    assert abs(est.grid_logdelta[j]) <= np.diff(est.grid_logdelta)[0]
    assert est.integral() == pytest.approx(1.0, abs=0.01)


def test_kde_too_few():
    with pytest.raises(TooFewSamples):
        gaussian_kde_2d([[1.0, 0.0]])
    with pytest.raises(TooFewSamples):
        gaussian_kde_1d([1.0])


def _independent_joint():
    gt = np.linspace(0, 10, 60)
    gd = np.linspace(-1, 1, 40)
    pt = stats.gamma(3).pdf(gt)
    pd = stats.norm(0, 0.3).pdf(gd)
    return DensityEstimate(gt, gd, np.outer(pt, pd), (1.0, 0.1)), pt, pd


def test_conditional_of_independent_joint():
    joint, pt, pd = _independent_joint()
    cond = conditional_density(joint, pd)
    for j in range(len(pd)):
        assert np.allclose(cond.values[:, j], pt, rtol=1e-12)
    assert np.allclose(cond.values * pd[None, :], joint.values, rtol=1e-10)


def test_column_normalization():
    joint, _, pd = _independent_joint()
    norm = column_normalized(conditional_density(joint, pd))
    assert np.allclose(norm.values.max(axis=0), 1.0)


def test_zero_marginal():
    joint, _, pd = _independent_joint()
    pd = pd.copy()
    pd[0] = 0.0
    with pytest.raises(ZeroMarginal):
        conditional_density(joint, pd)
    with pytest.raises(ValueError):
        conditional_density(joint, pd[:-1])


def test_conditional_columns_integrate_to_one():
    rng = np.random.default_rng(4)
    d = rng.normal(0, 0.3, 3000)
    t = np.exp(rng.normal(5 - 2 * d, 0.5))
    joint = gaussian_kde_2d(np.column_stack([t, d]))
    _, marg = gaussian_kde_1d(d, grid=joint.grid_logdelta, bandwidth=joint.bandwidths[1])
    cond = conditional_density(joint, marg)
    support = marg > 0.05 * marg.max()
    cols = trapezoid(cond.values, joint.grid_delay, axis=0)
    assert np.allclose(cols[support], 1.0, atol=0.01)


def test_wilson_interval():
    M = 1000
    low, high = wilson_interval(0, M)
    z2 = 1.959963984540054 ** 2
    assert low == 0.0 and high == pytest.approx(z2 / (M + z2), rel=1e-12)
    r = misfire_rate([True] * 20)
    assert r.rate == 1.0 and r.high == 1.0
    with pytest.raises(ValueError):
        wilson_interval(0, 0)


def test_wilson_contains_rate_and_binomial_coverage():
    rng = np.random.default_rng(5)
    p, n = 0.03, 400
    hits = 0
    for _ in range(2000):
        k = rng.binomial(n, p)
        lo, hi = wilson_interval(k, n)
        assert lo <= k / n <= hi
        hits += lo <= p <= hi
    assert hits / 2000 > 0.93


@settings(max_examples=50, deadline=None)
@given(flags=st.lists(st.booleans(), min_size=1, max_size=200), seed=st.integers(0, 1000))
def test_misfire_rate_shuffle_invariant(flags, seed):
    shuffled = list(np.random.default_rng(seed).permutation(flags))
    a, b = misfire_rate(flags), misfire_rate(shuffled)
    assert (a.rate, a.low, a.high, a.fires) == (b.rate, b.low, b.high, b.fires)
