"""Closed-loop event-triggered learning runs and the Monte Carlo delay study.

A run simulates the true plant under the controller designed for the current
model, evaluates the learning trigger at every step and, when it fires,
replaces the model (oracle copy or least-squares fit on an excitation
segment), redesigns the controller and recalibrates the trigger. The true
plant is perturbed every ``change_interval`` steps behind the loop's back.
"""

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .exceptions import EtlError, NumericalError, TooFewSamples, ZeroMarginal
from .identification import excitation, ols_estimate, oracle_update
from .linalg import spectral_radius
from .metrics import (
    DetectionRecord,
    column_normalized,
    conditional_density,
    gaussian_kde_1d,
    gaussian_kde_2d,
    misfire_rate,
    system_change_metric,
)
from .system import (
    DIVERGENCE_LIMIT,
    Trajectory,
    apply_controller,
    close_loop,
    decorrelation_lag,
    perturb_system,
    random_system,
    sample_stationary_state,
)
from .triggers import ChernoffTrigger, HoeffdingTrigger

__all__ = [
    "Event",
    "RunReport",
    "MonteCarloResult",
    "rollout_streams",
    "run_etl_scenario",
    "run_montecarlo",
    "delay_summary",
    "modal_delay",
    "SERIES_FIELDS",
]

SERIES_FIELDS = ("step", "cost", "psi", "kappa_minus", "kappa_plus", "expected", "event")
NOISE_BLOCK = 4096


@dataclass(frozen=True)
class Event:
    step: int
    kind: str
    detail: str = ""


@dataclass(eq=False)
class RunReport:
    """Outcome of one closed-loop run.

    ``series`` maps each name in :data:`SERIES_FIELDS` to a per-step array
    (``None`` when series recording is off). ``cost`` is the normalized window
    cost ``J_N / N``; ``kappa_minus`` is NaN for the mean-based triggers.
    """

    rollout: int
    seed: int
    status: str
    events: list
    records: list
    series: Optional[dict]
    matched_evaluations: int
    matched_fires: int
    disjoint_flags: list
    deltas: list
    steps_run: int

    @property
    def detections(self):
        return [e for e in self.events if e.kind == "detection"]

    @property
    def misfires(self):
        return [e for e in self.events if e.kind == "misfire"]

    def summary(self):
        detected = [r.delay for r in self.records if r.delay is not None]
        out = {
            "rollout": self.rollout,
            "seed": self.seed,
            "status": self.status,
            "steps": self.steps_run,
            "changes": len(self.records),
            "detected": len(detected),
            "missed": sum(r.censored for r in self.records),
            "diverged_changes": sum(r.diverged for r in self.records),
            "delays": detected,
            "median_delay": float(np.median(detected)) if detected else math.nan,
            "misfires": len(self.misfires),
            "matched_evaluations": self.matched_evaluations,
            "delta_sys": [r.delta_sys for r in self.records],
        }
        if self.matched_evaluations:
            step_rate = misfire_rate([True] * self.matched_fires + [False] * (self.matched_evaluations - self.matched_fires))
            out["misfire_rate_per_step"] = step_rate
        if self.disjoint_flags:
            out["misfire_rate_disjoint"] = misfire_rate(self.disjoint_flags)
        return out


def rollout_streams(seed, rollout):
    """Independent generators ``(system, noise, changes, excitation)`` for one rollout."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(rollout),))
    return tuple(np.random.default_rng(s) for s in ss.spawn(4))


class _Loop:
    """Mutable state of one run: truth, model, controller and trigger."""

    def __init__(self, cfg, rng_sys):
        self.cfg = cfg
        self.weights = cfg.cost_weights()
        self.truth = cfg.system if cfg.system is not None else random_system(cfg.random_spec, rng_sys)
        self.spec = cfg.trigger
        self.kappa0 = None
        self.gap = self.spec.gap
        self.set_model(self.truth)

    def set_model(self, model):
        model_cl = close_loop(model, self.weights)
        if self.spec.kind == "chernoff":
            est = ChernoffTrigger(horizon=self.spec.horizon, eta=self.spec.eta, dwell=self.spec.dwell)
            est.fit(model_cl)
            monitor = est.monitor()
            self.kappa_minus, self.kappa_plus = est.kappa_minus_, est.kappa_plus_
            self.spacing = est.config_.N
        else:
            if self.gap is None:
                X = model_cl.X_v
                self.gap = decorrelation_lag(model_cl, 0.01 * float(np.max(np.abs(X))))
            W = None if self.spec.W is None else np.asarray(self.spec.W, dtype=float)
            if self.kappa0 is not None:
                W = self.W0
            est = HoeffdingTrigger(
                horizon=self.spec.horizon, gap=self.gap, n_samples=self.spec.n_samples,
                eta=self.spec.eta, alpha=self.spec.alpha, W=W, kind=self.spec.hoeffding_kind,
            )
            est.fit(model_cl)
            if self.kappa0 is None:
                # the threshold is calibrated once on the initial model and kept
                self.W0 = est.config_.W
                self.kappa0 = est.kappa_ * (est.expected_cost_ if est.kind == "relative" else 1.0)
            kappa = self.kappa0 / est.expected_cost_ if est.kind == "relative" else self.kappa0
            monitor = est.monitor()
            monitor.reset(kappa=kappa)
            self.kappa_minus, self.kappa_plus = math.nan, kappa
            self.spacing = est.config_.L * est.config_.spacing
        self.model = model
        self.model_cl = model_cl
        self.F = np.array(model_cl.F)
        self.expected = est.expected_cost_
        self.monitor = monitor
        self.refresh_actual()

    def refresh_actual(self):
        self.actual = apply_controller(self.truth, self.F, self.weights)
        self.A_act = np.array(self.actual.A)
        self.B_true = np.array(self.truth.B)
        self.noise = np.array(self.truth.noise_factor)

    def stable_under_controller(self, candidate):
        return spectral_radius(candidate.A - candidate.B @ self.F) < 1.0


def _change_metric(old, new):
    if not (old.is_stable and new.is_stable):
        return math.inf, True
    try:
        return system_change_metric(old, new), False
    except NumericalError:
        return math.inf, True


def run_etl_scenario(cfg, rollout=0):
    """Run one closed-loop scenario; deterministic in ``(cfg, rollout)``."""
    rng_sys, rng_noise, rng_change, rng_excite = rollout_streams(cfg.seed, rollout)
    loop = _Loop(cfg, rng_sys)
    n = loop.truth.n
    T = int(cfg.total_steps)
    N = cfg.trigger.horizon

    events = []
    records = []
    deltas = []
    series = None
    if cfg.record_series:
        series = {
            "step": np.arange(T),
            "cost": np.full(T, np.nan),
            "psi": np.full(T, np.nan),
            "kappa_minus": np.full(T, np.nan),
            "kappa_plus": np.full(T, np.nan),
            "expected": np.full(T, np.nan),
            "event": [""] * T,
        }

    def log(k, kind, detail=""):
        events.append(Event(int(k), kind, detail))
        if series is not None and k < T:
            series["event"][k] = kind if not series["event"][k] else series["event"][k] + ";" + kind

    x = sample_stationary_state(loop.actual, rng_noise)
    pending = None  # (change_step, delta_sys, diverged) awaiting detection
    learning_left = 0
    segment_states = []
    segment_inputs = []
    reference = None
    ready_run = 0
    matched_evaluations = 0
    matched_fires = 0
    disjoint_flags = []
    status = "completed"
    z = None
    steps_run = T

    def finish_update(k, model, kind):
        nonlocal ready_run
        loop.set_model(model)
        ready_run = 0
        log(k, "model_update", kind)

    for k in range(T):
        if k % NOISE_BLOCK == 0:
            z = rng_noise.standard_normal((NOISE_BLOCK, n))

        if k > 0 and k % cfg.change_interval == 0:
            accept = loop.stable_under_controller if cfg.resample_unstable else None
            old_actual = loop.actual
            loop.truth = perturb_system(loop.truth, cfg.change_spec, rng_change, accept=accept)
            loop.refresh_actual()
            delta, diverged = _change_metric(old_actual, loop.actual)
            deltas.append(delta)
            if pending is not None:
                records.append(DetectionRecord(pending[0], pending[1], None, pending[2], rollout))
            pending = (k, delta, diverged)
            log(k, "change", f"delta_sys={delta!r}")

        u_ref = None
        if learning_left > 0:
            j = cfg.excitation.duration - learning_left
            u_ref = reference[j]
            segment_states.append(x.copy())
            segment_inputs.append(-loop.F @ x + u_ref)
            learning_left -= 1
        else:
            if learning_left == 0 and reference is not None:
                # excitation segment complete: fit and redesign
                segment_states.append(x.copy())
                traj = Trajectory(states=np.array(segment_states), inputs=np.array(segment_inputs), start_index=k - len(segment_inputs))
                reference = None
                segment_states, segment_inputs = [], []
                try:
                    finish_update(k, ols_estimate(traj).to_system(), "ols")
                except EtlError as exc:
                    log(k, "learning_failed", type(exc).__name__)
                    loop.monitor.reset()
                    ready_run = 0
                log(k, "learning_end")
            d = loop.monitor.step(x)
            if series is not None:
                series["cost"][k] = loop.monitor.last_cost / N
                series["psi"][k] = d.statistic
                series["kappa_minus"][k] = loop.kappa_minus
                series["kappa_plus"][k] = loop.kappa_plus
                series["expected"][k] = loop.expected
            if d.ready:
                ready_run += 1
                if pending is None:
                    matched_evaluations += 1
                    matched_fires += int(d.fired)
                    if (ready_run - 1) % loop.spacing == 0:
                        disjoint_flags.append(bool(d.fired or d.violation_side != "none"))
            if d.fired:
                if pending is not None:
                    records.append(DetectionRecord(pending[0], pending[1], k, pending[2], rollout))
                    log(k, "detection", f"delay={k - pending[0]}")
                    pending = None
                else:
                    log(k, "misfire")
                ready_run = 0
                if cfg.learning == "oracle":
                    try:
                        finish_update(k, oracle_update(loop.truth).to_system(), "oracle")
                    except EtlError as exc:
                        log(k, "learning_failed", type(exc).__name__)
                else:
                    reference = excitation(cfg.excitation, loop.truth.q, rng_excite)
                    learning_left = cfg.excitation.duration
                    log(k, "learning_start")
                    u_ref = reference[0]
                    segment_states.append(x.copy())
                    segment_inputs.append(-loop.F @ x + u_ref)
                    learning_left -= 1

        x = loop.A_act @ x + loop.noise @ z[k % NOISE_BLOCK]
        if u_ref is not None:
            x = x + loop.B_true @ u_ref
        if not np.all(np.abs(x) <= DIVERGENCE_LIMIT):
            log(k + 1 if k + 1 < T else k, "divergence")
            status = "diverged"
            steps_run = k + 1
            break

    if pending is not None:
        records.append(DetectionRecord(pending[0], pending[1], None, pending[2], rollout))
    if series is not None and steps_run < T:
        for key in SERIES_FIELDS:
            series[key] = series[key][:steps_run]
    return RunReport(
        rollout=rollout,
        seed=int(cfg.seed),
        status=status,
        events=events,
        records=records,
        series=series,
        matched_evaluations=matched_evaluations,
        matched_fires=matched_fires,
        disjoint_flags=disjoint_flags,
        deltas=deltas,
        steps_run=steps_run,
    )


@dataclass(eq=False)
class MonteCarloResult:
    records: list
    rollouts_completed: int
    joint: Optional[object] = None
    marginal: Optional[np.ndarray] = None
    conditional: Optional[object] = None
    normalized: Optional[object] = None
    error: Optional[str] = None
    bins: list = field(default_factory=list)

    @property
    def detected(self):
        return [r for r in self.records if r.delay is not None and not r.diverged]

    def miss_rate(self):
        if not self.records:
            return math.nan
        return sum(r.censored for r in self.records) / len(self.records)


def _changes_per_rollout(total, rollouts):
    base, extra = divmod(int(total), int(rollouts))
    return [base + (1 if i < extra else 0) for i in range(rollouts)]


def _montecarlo_rollout(args):
    cfg, rollout, changes = args
    steps = (changes + 1) * cfg.change_interval
    run_cfg = cfg.replace(total_steps=steps, record_series=False, resample_unstable=True)
    return run_etl_scenario(run_cfg, rollout=rollout).records


def run_montecarlo(cfg, rollouts=None, workers=1, changes=None, wall_budget=None):
    """Monte Carlo detection-delay study.

    ``changes`` plant changes are split over ``rollouts`` rollouts. Each
    rollout owns the streams derived from ``(cfg.seed, rollout index)``, so the
    merged records do not depend on ``workers``. With a ``wall_budget`` in
    seconds, rollouts that have not started when it runs out are dropped and
    the result holds the completed prefix.
    """
    mc = cfg.montecarlo
    rollouts = mc.rollouts if rollouts is None else int(rollouts)
    changes = mc.changes if changes is None else int(changes)
    wall_budget = mc.wall_budget if wall_budget is None else wall_budget
    plan = _changes_per_rollout(changes, rollouts)
    jobs = [(cfg, i, c) for i, c in enumerate(plan)]
    start = time.monotonic()
    results = []
    if workers is None or workers <= 1:
        for job in jobs:
            if wall_budget is not None and time.monotonic() - start > wall_budget:
                break
            results.append(_montecarlo_rollout(job))
    else:
        with ProcessPoolExecutor(max_workers=int(workers)) as pool:
            futures = [pool.submit(_montecarlo_rollout, job) for job in jobs]
            for fut in futures:
                if wall_budget is not None and time.monotonic() - start > wall_budget:
                    for f in futures:
                        f.cancel()
                if fut.cancelled():
                    break
                results.append(fut.result())
    records = [r for chunk in results for r in chunk]
    result = MonteCarloResult(records=records, rollouts_completed=len(results))
    _attach_density(result)
    return result


def _attach_density(result):
    det = result.detected
    samples = np.array([[r.delay, math.log10(r.delta_sys)] for r in det], dtype=float).reshape(-1, 2)
    try:
        if len(samples) < 2:
            raise TooFewSamples("kernel density needs at least two detected changes")
        joint = gaussian_kde_2d(samples)
        _, marginal = gaussian_kde_1d(samples[:, 1], grid=joint.grid_logdelta, bandwidth=joint.bandwidths[1])
        result.joint = joint
        result.marginal = marginal
        result.conditional = conditional_density(joint, marginal)
        result.normalized = column_normalized(result.conditional)
    except (TooFewSamples, ZeroMarginal) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
    result.bins = delay_summary(det) if len(det) >= 3 else []


def modal_delay(delays):
    """Mode of the Gaussian-kernel density of ``delays``."""
    grid, dens = gaussian_kde_1d(np.asarray(delays, dtype=float), points=512)
    return float(grid[int(np.argmax(dens))])


def delay_summary(records, n_bins=3):
    """Delay quantiles in equal-count bins of ``|log10 delta_sys|``, largest change first."""
    det = [r for r in records if r.delay is not None and not r.diverged]
    size = np.array([abs(math.log10(r.delta_sys)) for r in det])
    delays = np.array([r.delay for r in det], dtype=float)
    order = np.argsort(-size, kind="stable")
    rows = []
    for idx in np.array_split(order, n_bins):
        if len(idx) == 0:
            continue
        d = delays[idx]
        rows.append({
            "abs_log_delta_low": float(size[idx].min()),
            "abs_log_delta_high": float(size[idx].max()),
            "count": int(len(idx)),
            "q10": float(np.quantile(d, 0.1)),
            "median": float(np.median(d)),
            "q90": float(np.quantile(d, 0.9)),
            "mode": modal_delay(d) if len(d) >= 2 else float(d[0]),
        })
    return rows
