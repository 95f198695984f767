"""Dynamic proposal budget: sigmoid retention schedule over training progress.

Training progress is a state ``theta`` running linearly from 0 (start) to 1
(end). The schedule retains a fraction ``1 / (1 + exp(alpha * (omega * theta
- beta)))`` of the original proposal pool, so early training keeps nearly
everything and late training keeps only a floor of ``n_min`` proposals. The
retained fraction also induces a coarse stage label: the budget is still
within ``warm_frac`` of the full pool (warm-up), has dropped below the
``stable_frac`` cut (stable), or is in between (transition).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import InputError

# Stage cuts on the retained fraction. Warm-up while the budget is within 5%
# of the full pool; stable once more than half of the pool is dropped. Under
# the default schedule these cuts put roughly 40% of training in warm-up and
# 40-50% in the stable stage.
DEFAULT_WARM_FRAC = 0.05
DEFAULT_STABLE_FRAC = 0.5


class Stage(str, Enum):
    WARM_UP = "warm_up"
    TRANSITION = "transition"
    STABLE = "stable"


@dataclass(frozen=True)
class ScheduleConfig:
    """Sigmoid schedule parameters and the budget floor.

    ``alpha`` sets the steepness of the drop (larger = narrower transition),
    ``beta / omega`` locates its midpoint in training progress, and ``n_min``
    is the smallest budget ever issued.
    """

    alpha: float = 10.0
    beta: float = 0.8
    omega: float = 1.36
    n_min: int = 128

    def __post_init__(self):
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise InputError(f"alpha must be positive and finite, got {self.alpha}")
        if not (self.omega > 0 and math.isfinite(self.omega)):
            raise InputError(f"omega must be positive and finite, got {self.omega}")
        if not math.isfinite(self.beta):
            raise InputError(f"beta must be finite, got {self.beta}")
        if int(self.n_min) != self.n_min or self.n_min < 1:
            raise InputError(f"n_min must be a positive integer, got {self.n_min}")


def _check_theta(theta: float) -> float:
    theta = float(theta)
    if not (0.0 <= theta <= 1.0):
        raise InputError(f"training state must lie in [0, 1], got {theta}")
    return theta


def _sigmoid(x):
    # Stable for large |x|; never overflows.
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def retained_fraction(cfg: ScheduleConfig, theta: float) -> float:
    """Fraction of the original proposal pool retained at progress ``theta``.

    Strictly decreasing in ``theta`` and inside (0, 1) for any finite
    configuration within float range.
    """
    theta = _check_theta(theta)
    x = cfg.alpha * (cfg.omega * theta - cfg.beta)
    return float(_sigmoid(np.array([-x]))[0])


def active_budget(cfg: ScheduleConfig, theta: float, total_proposals: int) -> int:
    """Number of proposals to keep: ``max(floor(fraction * total), n_min)``.

    The result may exceed ``total_proposals`` when ``n_min`` does; consumers
    clamp to the available supply.
    """
    if total_proposals < 1:
        raise InputError(f"total_proposals must be >= 1, got {total_proposals}")
    frac = retained_fraction(cfg, theta)
    return max(int(math.floor(frac * total_proposals)), int(cfg.n_min))


def stage_of(
    cfg: ScheduleConfig,
    theta: float,
    warm_frac: float = DEFAULT_WARM_FRAC,
    stable_frac: float = DEFAULT_STABLE_FRAC,
) -> Stage:
    """Stage label at ``theta``: warm-up, transition, or stable.

    Warm-up while the retained fraction is at least ``1 - warm_frac``; stable
    once it falls strictly below ``stable_frac``. The comparison is strict so
    the schedule midpoint (fraction exactly 0.5) still counts as transition
    under the defaults.
    """
    _check_stage_fracs(warm_frac, stable_frac)
    frac = retained_fraction(cfg, theta)
    if frac >= 1.0 - warm_frac:
        return Stage.WARM_UP
    if frac < stable_frac:
        return Stage.STABLE
    return Stage.TRANSITION


def stage_occupancy(
    cfg: ScheduleConfig,
    steps: int,
    warm_frac: float = DEFAULT_WARM_FRAC,
    stable_frac: float = DEFAULT_STABLE_FRAC,
) -> tuple[float, float, float]:
    """Share of training spent in each stage, sampled on a uniform grid.

    Returns ``(warm_share, transition_share, stable_share)``; the three
    shares partition the grid and sum to 1.
    """
    if steps < 3:
        raise InputError(f"occupancy needs at least 3 sample points, got {steps}")
    _check_stage_fracs(warm_frac, stable_frac)
    thetas = np.linspace(0.0, 1.0, int(steps))
    fracs = _sigmoid(-(cfg.alpha * (cfg.omega * thetas - cfg.beta)))
    warm = int(np.count_nonzero(fracs >= 1.0 - warm_frac))
    stable = int(np.count_nonzero(fracs < stable_frac))
    total = int(steps)
    return (warm / total, (total - warm - stable) / total, stable / total)


def _check_stage_fracs(warm_frac: float, stable_frac: float) -> None:
    if not (warm_frac > 0 and stable_frac > 0 and warm_frac + stable_frac < 1):
        raise InputError(
            "stage fractions must be positive and sum to less than 1, got "
            f"warm_frac={warm_frac}, stable_frac={stable_frac}"
        )
