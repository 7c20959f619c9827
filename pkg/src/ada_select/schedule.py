"""Round-indexed split of the labeling budget between the two samplers.

Early rounds lean on density ranking (the model's target predictions are
still poor); later rounds hand an increasing share to uncertainty. The
default schedule halves the density fraction each round.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from .errors import InvalidInput
from .util import clamp, round_half_up


class SchedulePolicy(str, Enum):
    HALF_DECAY = "half_decay"
    PURE_DENSITY = "pure_density"
    PURE_UNCERTAINTY = "pure_uncertainty"
    EVEN = "even"
    LINEAR_DECAY = "linear_decay"


@dataclass(frozen=True)
class ScheduleParams:
    alpha: float = 1.0
    beta: float = 1.0
    policy: SchedulePolicy = SchedulePolicy.HALF_DECAY
    rounds: int = 5
    round_budget_px: int = 0

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise InvalidInput(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.beta < 0.0:
            raise InvalidInput(f"beta must be >= 0, got {self.beta}")
        if self.rounds < 1:
            raise InvalidInput(f"rounds must be >= 1, got {self.rounds}")
        if self.round_budget_px < 0:
            raise InvalidInput(
                f"round_budget_px must be >= 0, got {self.round_budget_px}"
            )


@dataclass(frozen=True)
class BudgetPlan:
    round_index: int
    density_fraction: float
    density_px: int
    uncertainty_px: int

    @property
    def total_px(self) -> int:
        return self.density_px + self.uncertainty_px


def density_fraction(params: ScheduleParams, round_index: int) -> float:
    """Fraction of this round's budget given to the density sampler.

    Rounds are 1-based. The default policy is alpha * 2**(-beta*(n-1)),
    which for alpha=beta=1 yields exactly 1, 1/2, 1/4, ...
    """
    if not 1 <= round_index <= params.rounds:
        raise InvalidInput(
            f"round_index must lie in [1, {params.rounds}], got {round_index}"
        )
    n = round_index
    if params.policy is SchedulePolicy.HALF_DECAY:
        return params.alpha * 2.0 ** (-params.beta * (n - 1))
    if params.policy is SchedulePolicy.PURE_DENSITY:
        return 1.0
    if params.policy is SchedulePolicy.PURE_UNCERTAINTY:
        return 0.0
    if params.policy is SchedulePolicy.EVEN:
        return 0.5
    if params.policy is SchedulePolicy.LINEAR_DECAY:
        return clamp(1.0 - 0.2 * (n - 1), 0.0, 1.0)
    raise InvalidInput(f"unknown schedule policy: {params.policy!r}")


def split_budget(params: ScheduleParams, round_index: int) -> BudgetPlan:
    """Integer split of the round budget; pixel counts sum exactly to it.

    The density share rounds half-up; the uncertainty sampler gets the
    remainder, so no pixel is lost or double-counted.
    """
    lam = density_fraction(params, round_index)
    density_px = round_half_up(lam * params.round_budget_px)
    return BudgetPlan(
        round_index=round_index,
        density_fraction=lam,
        density_px=density_px,
        uncertainty_px=params.round_budget_px - density_px,
    )
