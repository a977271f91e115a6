"""Error-spending sequences for the stopping boundaries and the joint test."""

from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class SpendingSchedule:
    """Ratio-form spending sequence ``eps_t = epsilon * t / (half_life + t)``.

    ``half_life`` is the step at which half of ``epsilon_total`` has been
    spent.
    """

    epsilon_total: float
    half_life: int = 1000
    kind: str = "ratio"

    def __post_init__(self) -> None:
        if not 0.0 < self.epsilon_total < 1.0:
            raise ValueError(f"epsilon_total must lie in (0, 1), got {self.epsilon_total}")
        if self.half_life < 1:
            raise ValueError(f"half_life must be a positive integer, got {self.half_life}")
        if self.kind != "ratio":
            raise ValueError(f"unsupported spending kind {self.kind!r}")

    def increment_bound(self) -> tuple[float, float, int]:
        """Return ``(lam, q, T)`` with ``eps_t - eps_{t-1} >= lam * t**-q`` for all ``t >= T``.

        The increment is ``eps*h / ((h+t)(h+t-1))`` and ``(h+t)(h+t-1) <= (h+1)**2 * t**2``
        for ``t >= 1``, so ``lam = eps*h/(h+1)**2``, ``q = 2`` hold from ``T = 1``.
        """
        h = self.half_life
        return self.epsilon_total * h / (h + 1) ** 2, 2.0, 1

    def increment_bound_start(self, lam: float, q: float) -> int | None:
        """Smallest ``T`` with ``eps_t - eps_{t-1} >= lam * t**-q`` for every ``t >= T``.

        Only ``q >= 2`` is supported; there ``t**q`` times the increment is
        nondecreasing, so the condition is monotone in ``t``. ``None`` when
        it never holds.
        """
        if q < 2:
            raise ValueError("increment_bound_start supports q >= 2 only")

        def holds(t: int) -> bool:
            h = self.half_life
            return self.epsilon_total * h * t**q >= lam * (h + t) * (h + t - 1)

        hi = 1
        while not holds(hi):
            hi *= 2
            if hi > 2**62:
                return None
        if hi == 1:
            return 1
        lo = hi // 2
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if holds(mid):
                hi = mid
            else:
                lo = mid
        return hi


def epsilon_at(sched: SpendingSchedule, t: float) -> float:
    """Cumulative error budget ``eps_t`` spent by step ``t``.

    ``t = math.inf`` returns the limit ``epsilon_total``.
    """
    if t < 0:
        raise ValueError(f"step must be nonnegative, got {t}")
    if math.isinf(t):
        return sched.epsilon_total
    return sched.epsilon_total * t / (sched.half_life + t)


@dataclass(frozen=True)
class JointSpendingSchedule:
    """Budget for the joint-information test, spent only at checkpoints.

    Checkpoints sit at ``t_i = i * checkpoint_stride``; the cumulative level
    through checkpoint ``i`` is ``gamma_joint * i / (horizon_constant + i)``.
    """

    gamma_joint: float
    checkpoint_stride: int = 200_000
    horizon_constant: int = 20

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma_joint < 1.0:
            raise ValueError(f"gamma_joint must lie in [0, 1), got {self.gamma_joint}")
        if self.checkpoint_stride < 1:
            raise ValueError("checkpoint_stride must be a positive integer")
        if self.horizon_constant < 1:
            raise ValueError("horizon_constant must be a positive integer")

    def checkpoint_index(self, t: int) -> int | None:
        """Index ``i`` if ``t`` is a checkpoint, else ``None``."""
        if t > 0 and t % self.checkpoint_stride == 0:
            return t // self.checkpoint_stride
        return None

    def next_checkpoint(self, t: int) -> int:
        """First checkpoint strictly after step ``t``."""
        return (t // self.checkpoint_stride + 1) * self.checkpoint_stride

    def xi_at(self, t: int) -> float:
        """Level ``xi_t`` available at step ``t`` (zero off checkpoints)."""
        i = self.checkpoint_index(t)
        if i is None:
            return 0.0
        return xi_cumulative_at_checkpoint(self, i) - xi_cumulative_at_checkpoint(self, i - 1)


def xi_cumulative_at_checkpoint(sched: JointSpendingSchedule, i: float) -> float:
    """Joint-test level spent through checkpoint ``i`` (0 for ``i = 0``)."""
    if i < 0:
        raise ValueError(f"checkpoint index must be nonnegative, got {i}")
    if math.isinf(i):
        return sched.gamma_joint
    return sched.gamma_joint * i / (sched.horizon_constant + i)
