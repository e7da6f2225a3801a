"""YAML scenario configuration and CSV trajectory files.

Schema (all keys optional unless noted)::

    seed: 0                      # master seed
    total_steps: 50000
    change_interval: 10000
    learning: oracle             # oracle | ols
    system:
      random: {n: 5, q: 1, entry_range: [-1, 1], beta_range: [-0.1, 0.1]}
      # or explicit row-major matrices
      A: [[...], ...]
      B: [[...], ...]
      V: [[...], ...]
    weights: {Q: [[...]], R: [[...]]}          # identity by default
    trigger:
      kind: chernoff             # chernoff | hoeffding | relative | second_moment
      horizon: 200
      eta: 0.01
      dwell: 1
      gap: 60                    # Hoeffding family only; null -> decorrelation lag
      n_samples: 20
      alpha: 18.0
      W: null                    # null -> root of the stationary covariance
    excitation: {kind: chirp, amplitude: 1.0, f_start: 0.01, f_end: 0.2, duration: 2000}
    montecarlo: {rollouts: 10, changes: 100, wall_budget: null}
"""

import csv
from dataclasses import asdict, dataclass, field
from dataclasses import replace as dc_replace
from typing import Optional

import numpy as np
import yaml

from .exceptions import ConfigError
from .identification import ExcitationSignal
from .system import CostWeights, OpenLoopSystem, RandomSystemSpec, Trajectory

__all__ = [
    "TriggerSpec",
    "MonteCarloSpec",
    "ScenarioConfig",
    "load_config",
    "parse_config",
    "dump_config",
    "system_to_dict",
    "system_from_dict",
    "save_trajectory",
    "load_trajectory",
]

TRIGGER_KINDS = ("chernoff", "hoeffding", "relative", "second_moment")
LEARNING_MODES = ("oracle", "ols")


@dataclass(frozen=True)
class TriggerSpec:
    kind: str = "chernoff"
    horizon: int = 200
    eta: float = 0.01
    dwell: int = 1
    gap: Optional[int] = 60
    n_samples: int = 20
    alpha: float = 18.0
    W: Optional[list] = None

    def __post_init__(self):
        if self.kind not in TRIGGER_KINDS:
            raise ConfigError(f"trigger kind must be one of {TRIGGER_KINDS}, got {self.kind!r}")
        if not 0.0 < self.eta < 1.0:
            raise ConfigError("trigger eta must lie in (0, 1)")
        for name in ("horizon", "dwell", "n_samples"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"trigger {name} must be a positive integer")
        if self.gap is not None and int(self.gap) < 1:
            raise ConfigError("trigger gap must be a positive integer or null")
        if not self.alpha > 0:
            raise ConfigError("trigger alpha must be positive")

    @property
    def hoeffding_kind(self):
        return {"hoeffding": "mean", "relative": "relative", "second_moment": "second_moment"}.get(self.kind)


@dataclass(frozen=True)
class MonteCarloSpec:
    rollouts: int = 10
    changes: int = 100
    wall_budget: Optional[float] = None

    def __post_init__(self):
        if self.rollouts < 1:
            raise ConfigError("montecarlo rollouts must be positive")
        if self.changes < 0:
            raise ConfigError("montecarlo changes must be nonnegative")


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Everything a closed-loop run needs; ``system`` overrides ``random_spec``."""

    seed: int = 0
    total_steps: int = 50000
    change_interval: int = 10000
    learning: str = "oracle"
    random_spec: RandomSystemSpec = field(default_factory=RandomSystemSpec)
    system: Optional[OpenLoopSystem] = None
    weights: Optional[CostWeights] = None
    trigger: TriggerSpec = field(default_factory=TriggerSpec)
    excitation: ExcitationSignal = field(default_factory=ExcitationSignal)
    montecarlo: MonteCarloSpec = field(default_factory=MonteCarloSpec)
    resample_unstable: bool = False
    record_series: bool = True

    def __post_init__(self):
        if self.learning not in LEARNING_MODES:
            raise ConfigError(f"learning must be one of {LEARNING_MODES}, got {self.learning!r}")
        if self.change_interval < 1:
            raise ConfigError("change_interval must be positive")
        if self.total_steps < self.change_interval:
            raise ConfigError("total_steps must be at least change_interval")
        n = self.system.n if self.system is not None else self.random_spec.n
        q = self.system.q if self.system is not None else self.random_spec.q
        if self.weights is not None:
            if self.weights.Q_lqr.shape != (n, n) or self.weights.R_lqr.shape != (q, q):
                raise ConfigError("weight dimensions do not match the system")

    @property
    def n(self):
        return self.system.n if self.system is not None else self.random_spec.n

    @property
    def q(self):
        return self.system.q if self.system is not None else self.random_spec.q

    @property
    def change_spec(self):
        """Perturbation sampler sized to the plant actually simulated."""
        spec = self.random_spec
        return RandomSystemSpec(n=self.n, q=self.q, entry_range=spec.entry_range, beta_range=spec.beta_range)

    def cost_weights(self):
        return self.weights if self.weights is not None else CostWeights.identity(self.n, self.q)

    def replace(self, **changes):
        return dc_replace(self, **changes)


def _matrix(value, name):
    try:
        M = np.array(value, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} is not a numeric matrix") from exc
    if M.ndim == 0:
        M = M.reshape(1, 1)
    if M.ndim != 2:
        raise ConfigError(f"{name} must be a nested list of rows")
    return M


def system_to_dict(sys):
    return {"A": sys.A.tolist(), "B": sys.B.tolist(), "V": sys.V.tolist()}


def system_from_dict(d):
    missing = [k for k in ("A", "B", "V") if k not in d]
    if missing:
        raise ConfigError(f"explicit system needs {missing}")
    try:
        return OpenLoopSystem(A=_matrix(d["A"], "A"), B=_matrix(d["B"], "B"), V=_matrix(d["V"], "V"))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _known(section, data, allowed):
    extra = set(data) - set(allowed)
    if extra:
        raise ConfigError(f"unknown keys in {section}: {sorted(extra)}")


def parse_config(data):
    """Build a :class:`ScenarioConfig` from the parsed YAML mapping."""
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError("config must be a mapping")
    _known("config", data, ("seed", "total_steps", "change_interval", "learning", "system",
                            "weights", "trigger", "excitation", "montecarlo", "resample_unstable"))
    kwargs = {}
    for key in ("seed", "total_steps", "change_interval"):
        if key in data:
            kwargs[key] = int(data[key])
    if "learning" in data:
        kwargs["learning"] = str(data["learning"])
    if "resample_unstable" in data:
        kwargs["resample_unstable"] = bool(data["resample_unstable"])
    try:
        sysd = data.get("system") or {}
        if "random" in sysd:
            _known("system.random", sysd["random"] or {}, ("n", "q", "entry_range", "beta_range"))
            r = dict(sysd["random"] or {})
            for key in ("entry_range", "beta_range"):
                if key in r:
                    r[key] = tuple(float(v) for v in r[key])
            kwargs["random_spec"] = RandomSystemSpec(**r)
        if any(k in sysd for k in ("A", "B", "V")):
            kwargs["system"] = system_from_dict(sysd)
        if "weights" in data:
            w = data["weights"] or {}
            _known("weights", w, ("Q", "R"))
            sys = kwargs.get("system")
            spec = kwargs.get("random_spec", RandomSystemSpec())
            n = sys.n if sys is not None else spec.n
            q = sys.q if sys is not None else spec.q
            Q = _matrix(w["Q"], "Q") if "Q" in w else np.eye(n)
            R = _matrix(w["R"], "R") if "R" in w else np.eye(q)
            kwargs["weights"] = CostWeights(Q, R)
        if "trigger" in data:
            t = dict(data["trigger"] or {})
            _known("trigger", t, TriggerSpec.__dataclass_fields__)
            kwargs["trigger"] = TriggerSpec(**t)
        if "excitation" in data:
            e = dict(data["excitation"] or {})
            _known("excitation", e, ExcitationSignal.__dataclass_fields__)
            kwargs["excitation"] = ExcitationSignal(**e)
        if "montecarlo" in data:
            m = dict(data["montecarlo"] or {})
            _known("montecarlo", m, MonteCarloSpec.__dataclass_fields__)
            kwargs["montecarlo"] = MonteCarloSpec(**m)
        return ScenarioConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path):
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML in {path}: {exc}") from exc
    return parse_config(data)


def dump_config(cfg):
    """YAML text that :func:`parse_config` maps back to ``cfg``."""
    data = {
        "seed": int(cfg.seed),
        "total_steps": int(cfg.total_steps),
        "change_interval": int(cfg.change_interval),
        "learning": cfg.learning,
        "resample_unstable": bool(cfg.resample_unstable),
        "trigger": asdict(cfg.trigger),
        "excitation": asdict(cfg.excitation),
        "montecarlo": asdict(cfg.montecarlo),
    }
    spec = asdict(cfg.random_spec)
    spec["entry_range"] = list(spec["entry_range"])
    spec["beta_range"] = list(spec["beta_range"])
    data["system"] = {"random": spec}
    if cfg.system is not None:
        data["system"].update(system_to_dict(cfg.system))
    if cfg.weights is not None:
        data["weights"] = {"Q": cfg.weights.Q_lqr.tolist(), "R": cfg.weights.R_lqr.tolist()}
    return yaml.safe_dump(data, sort_keys=False)


def save_trajectory(traj, path):
    """CSV with columns ``x0..x{n-1}, u0..u{q-1}``; the final state row has empty inputs."""
    X, U = traj.states, traj.inputs
    n, q = X.shape[1], U.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(n)] + [f"u{j}" for j in range(q)])
        for k in range(len(X)):
            u = [repr(float(v)) for v in U[k]] if k < len(U) else [""] * q
            w.writerow([repr(float(v)) for v in X[k]] + u)


def load_trajectory(path):
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise ConfigError(f"cannot read trajectory {path}: {exc}") from exc
    if not rows:
        raise ConfigError(f"trajectory file {path} is empty")
    header = rows[0]
    xi = [i for i, h in enumerate(header) if h.startswith("x")]
    ui = [i for i, h in enumerate(header) if h.startswith("u")]
    if not xi or not ui:
        raise ConfigError("trajectory header needs x* and u* columns")
    try:
        X = np.array([[float(r[i]) for i in xi] for r in rows[1:]])
        U = np.array([[float(r[i]) for i in ui] for r in rows[1:] if all(r[i] != "" for i in ui)])
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"malformed trajectory row: {exc}") from exc
    if U.size == 0:
        U = np.zeros((0, len(ui)))
    try:
        return Trajectory(states=X, inputs=U)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
