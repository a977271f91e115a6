"""Run configuration and its flat ``key=value`` file format."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

from .precision import Band, Custom, Fixed, LeftTail, PrecisionRule, SqrtProfile, parse_rule
from .samplers import SamplerSpec, parse_sampler
from .spending import JointSpendingSchedule, SpendingSchedule


class ConfigError(ValueError):
    pass


def reference_length(rule: PrecisionRule) -> float:
    """The tightest length a rule ever asks for; sets the default ``epsilon``."""
    if isinstance(rule, Fixed):
        return rule.delta
    if isinstance(rule, SqrtProfile):
        return rule.delta_ref
    if isinstance(rule, Band):
        return rule.inner
    if isinstance(rule, LeftTail):
        return rule.delta
    if isinstance(rule, Custom):
        positive = [d for d in rule.knots_delta if d > 0]
        return min(positive) if positive else 0.0
    raise ConfigError(f"no reference length for rule {rule!r}")


@dataclass
class RunConfig:
    alpha: float = 0.05
    rule: PrecisionRule = field(default_factory=lambda: Fixed(0.02))
    gamma: float = 0.01
    epsilon: float | None = None          # default: reference length / 200
    spending_halflife: int = 1000
    use_pilot: bool = True
    pilot_n: int = 1000
    pilot_tmax: int = 1000
    gamma_pilot: float | None = None      # default: gamma / 10
    joint_test: bool = True
    gamma_joint: float | None = None      # default: gamma / 10
    eta: float = 0.05
    joint_stride: int = 200_000
    joint_horizon: int = 20
    joint_prefer: str = "pilot"           # side given the odd extra resolution: pilot | positive | negative
    sampler: SamplerSpec = field(default_factory=lambda: SamplerSpec.beta(1.0))
    seed: int = 0
    workers: int = 1
    max_effort: float = 1e10
    n_streams: int | None = None          # fixed N, skipping the planner
    plan: str = "opt"                     # opt | pilot | blind
    nopt_grid: int = 25
    nopt_reps: int = 200
    nopt_hi_factor: float = 4.0
    log_path: str | None = None
    report_path: str | None = None
    checkpoint_path: str | None = None
    checkpoint_every: float = 60.0        # seconds between checkpoint writes

    # -- derived values -----------------------------------------------------

    @property
    def epsilon_value(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return reference_length(self.rule) / 200.0

    @property
    def gamma_pilot_value(self) -> float:
        if not self.use_pilot:
            return 0.0
        return self.gamma / 10.0 if self.gamma_pilot is None else self.gamma_pilot

    @property
    def gamma_joint_value(self) -> float:
        if not self.joint_test:
            return 0.0
        return self.gamma / 10.0 if self.gamma_joint is None else self.gamma_joint

    @property
    def gamma_main(self) -> float:
        """Level left for the main-run interval after the pilot and joint-test shares."""
        return self.gamma - self.gamma_pilot_value - self.gamma_joint_value

    def spending(self) -> SpendingSchedule:
        return SpendingSchedule(self.epsilon_value, self.spending_halflife)

    def joint_schedule(self) -> JointSpendingSchedule:
        return JointSpendingSchedule(self.gamma_joint_value, self.joint_stride, self.joint_horizon)

    def validate(self) -> "RunConfig":
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not 0.0 < self.gamma < 1.0:
            raise ConfigError(f"gamma must lie in (0, 1), got {self.gamma}")
        eps = self.epsilon_value
        if not 0.0 < eps < 1.0:
            raise ConfigError(f"epsilon must lie in (0, 1), got {eps}; set --epsilon explicitly")
        if self.gamma_pilot_value < 0 or self.gamma_joint_value < 0:
            raise ConfigError("gamma-pilot and gamma-joint must be nonnegative")
        if self.gamma_main <= 0.0:
            raise ConfigError(
                f"gamma-pilot ({self.gamma_pilot_value:g}) + gamma-joint ({self.gamma_joint_value:g}) "
                f"must stay below gamma ({self.gamma:g}); nothing is left for the main interval"
            )
        if self.use_pilot and (self.pilot_n < 1 or self.pilot_tmax < 1):
            raise ConfigError("pilot-n and pilot-tmax must be at least 1")
        if self.joint_test and not 0.0 < self.eta < 1.0:
            raise ConfigError(f"eta must lie in (0, 1), got {self.eta}")
        if self.n_streams is not None and self.n_streams < 1:
            raise ConfigError("N must be at least 1")
        if self.plan not in ("opt", "pilot", "blind"):
            raise ConfigError(f"plan must be opt, pilot or blind, got {self.plan!r}")
        if self.plan in ("pilot", "opt") and not self.use_pilot and self.n_streams is None:
            raise ConfigError(f"plan {self.plan!r} needs the pilot; use --plan blind or give -N")
        if self.joint_prefer not in ("pilot", "positive", "negative"):
            raise ConfigError(f"joint-prefer must be pilot, positive or negative, got {self.joint_prefer!r}")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.max_effort <= 0:
            raise ConfigError("max-effort must be positive")
        return self

    def summary(self) -> dict:
        """JSON-ready description used in reports."""
        return {
            "alpha": self.alpha,
            "rule": self.rule.describe(),
            "gamma": self.gamma,
            "epsilon": self.epsilon_value,
            "spending_halflife": self.spending_halflife,
            "use_pilot": self.use_pilot,
            "pilot_n": self.pilot_n,
            "pilot_tmax": self.pilot_tmax,
            "gamma_pilot": self.gamma_pilot_value,
            "joint_test": self.joint_test,
            "gamma_joint": self.gamma_joint_value,
            "eta": self.eta,
            "joint_stride": self.joint_stride,
            "sampler": self.sampler.describe(),
            "seed": self.seed,
            "max_effort": self.max_effort,
            "n_streams": self.n_streams,
            "plan": self.plan,
        }


# flat key=value file: keys mirror the CLI flags
_FILE_KEYS = {
    "alpha": ("alpha", float),
    "delta": ("rule", lambda v: Fixed(float(v))),
    "rule": ("rule", parse_rule),
    "gamma": ("gamma", float),
    "epsilon": ("epsilon", float),
    "spending-halflife": ("spending_halflife", int),
    "pilot": ("use_pilot", lambda v: v.lower() in ("1", "true", "yes", "on")),
    "pilot-n": ("pilot_n", int),
    "pilot-tmax": ("pilot_tmax", int),
    "gamma-pilot": ("gamma_pilot", float),
    "joint-test": ("joint_test", lambda v: v.lower() in ("1", "true", "yes", "on")),
    "gamma-joint": ("gamma_joint", float),
    "eta": ("eta", float),
    "joint-stride": ("joint_stride", int),
    "joint-prefer": ("joint_prefer", str),
    "sampler": ("sampler", parse_sampler),
    "seed": ("seed", int),
    "workers": ("workers", int),
    "max-effort": ("max_effort", float),
    "n": ("n_streams", int),
    "plan": ("plan", str),
    "nopt-grid": ("nopt_grid", int),
    "nopt-reps": ("nopt_reps", int),
    "log": ("log_path", str),
    "report": ("report_path", str),
    "checkpoint": ("checkpoint_path", str),
    "checkpoint-every": ("checkpoint_every", float),
}


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines (``#`` comments) into RunConfig keyword arguments."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().lstrip("-").replace("_", "-")
        if not sep or key not in _FILE_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown or malformed entry {raw!r}")
        name, conv = _FILE_KEYS[key]
        try:
            out[name] = conv(value.strip())
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return out


def default_seed() -> int:
    """Seed from ``MCPOWER_SEED`` when set, else 0."""
    value = os.environ.get("MCPOWER_SEED")
    if value is None or value == "":
        return 0
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"MCPOWER_SEED must be an integer, got {value!r}") from None


def replace(cfg: RunConfig, **changes) -> RunConfig:
    return dataclasses.replace(cfg, **changes)
