"""Time-dependent cost curves, reward schemes and the metric-goal wrapper."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence, Union

import numpy as np

from .env import Episode, Outcome

LN2 = math.log(2.0)


# ---------------------------------------------------------------------------
# Segments

@dataclass(frozen=True)
class Linear:
    """``slope * t + intercept``."""

    slope: float
    intercept: float = 0.0

    def __call__(self, t):
        return self.slope * np.asarray(t, dtype=float) + self.intercept

    def antiderivative(self, t: float) -> float:
        return 0.5 * self.slope * t * t + self.intercept * t

    def compose(self, scale: float, shift: float) -> "Linear":
        return Linear(self.slope * scale, self.slope * shift + self.intercept)

    def nondecreasing_on(self, a: float, b: float) -> bool:
        return self.slope >= 0


@dataclass(frozen=True)
class LogScaled:
    """``1 + log2((scale * t + shift) / denominator)``.

    With the defaults this is the ``1 + log2(t / d)`` branch of the two-region
    curves; ``scale``/``shift`` appear when a segment is pulled back through
    an affine change of variable.
    """

    denominator: float
    scale: float = 1.0
    shift: float = 0.0

    def __post_init__(self):
        if not self.denominator > 0:
            raise ValueError("LogScaled denominator must be > 0")

    def _w(self, t):
        return self.scale * np.asarray(t, dtype=float) + self.shift

    def __call__(self, t):
        return 1.0 + np.log2(self._w(t) / self.denominator)

    def antiderivative(self, t: float) -> float:
        w = float(self._w(t))
        # d/dt [w ln w - w] = scale * ln w
        wlnw = w * math.log(w) - w if w > 0 else 0.0
        return (1.0 - math.log2(self.denominator)) * t + wlnw / (self.scale * LN2)

    def compose(self, scale: float, shift: float) -> "LogScaled":
        return LogScaled(self.denominator, self.scale * scale, self.scale * shift + self.shift)

    def nondecreasing_on(self, a: float, b: float) -> bool:
        return self.scale > 0 and float(self._w(a)) > 0


@dataclass(frozen=True)
class Custom:
    """Arbitrary non-decreasing callable; integrated numerically."""

    fn: Callable[[float], float]
    name: str = "custom"

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        if t.ndim == 0:
            return float(self.fn(float(t)))
        return np.array([self.fn(float(x)) for x in t.ravel()]).reshape(t.shape)

    antiderivative = None

    def compose(self, scale: float, shift: float) -> "Custom":
        fn = self.fn
        return Custom(lambda t: fn(scale * t + shift), f"{self.name}∘affine")

    def nondecreasing_on(self, a: float, b: float) -> bool:
        grid = np.linspace(a, b, 33)
        vals = self(grid)
        return bool(np.all(np.diff(vals) >= -1e-12))


Segment = Union[Linear, LogScaled, Custom]


# ---------------------------------------------------------------------------
# Curves

class CurveError(ValueError):
    pass


@dataclass(frozen=True)
class CostCurve:
    """Piecewise, continuous, non-decreasing cost of time.

    ``boundaries`` holds ``d^0 < d^1 < ... < d^K``; segment ``i`` covers
    ``[d^i, d^{i+1}]``. Times past ``d^K`` cost the cap ``u = C(d^K)``;
    times before ``d^0`` cost ``C(d^0)``.
    """

    boundaries: tuple[float, ...]
    segments: tuple[Segment, ...]
    continuity_tol: float = 1e-9

    def __post_init__(self):
        b = tuple(float(x) for x in self.boundaries)
        object.__setattr__(self, "boundaries", b)
        object.__setattr__(self, "segments", tuple(self.segments))
        if len(b) < 2 or len(self.segments) != len(b) - 1:
            raise CurveError("need K >= 1 segments and K+1 boundaries")
        if any(not math.isfinite(x) for x in b) or any(y <= x for x, y in zip(b, b[1:])):
            raise CurveError(f"boundaries must be finite and strictly increasing: {b}")
        for i, seg in enumerate(self.segments):
            if not seg.nondecreasing_on(b[i], b[i + 1]):
                raise CurveError(f"segment {i} is not non-decreasing on its interval")
        for m in range(1, self.K):
            left = float(self.segments[m - 1](b[m]))
            right = float(self.segments[m](b[m]))
            if abs(left - right) > self.continuity_tol * max(1.0, abs(left)):
                raise CurveError(f"discontinuity at d^{m}={b[m]}: {left} vs {right}")

    @property
    def K(self) -> int:
        return len(self.segments)

    @property
    def start(self) -> float:
        return self.boundaries[0]

    @property
    def end(self) -> float:
        return self.boundaries[-1]

    @property
    def cap(self) -> float:
        return float(self.segments[-1](self.end))

    def __call__(self, t):
        return curve_value(self, t)

    def segment_index(self, t: float) -> int:
        # left-closed intervals; the last one is closed on both ends
        i = int(np.searchsorted(self.boundaries, t, side="right")) - 1
        return min(max(i, 0), self.K - 1)


def curve_value(curve: CostCurve, t):
    """Evaluate the curve at ``t`` seconds (scalar or array)."""
    arr = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise CurveError("time must be finite and >= 0")
    clamped = np.clip(arr, curve.start, curve.end)
    if arr.ndim == 0:
        x = float(clamped)
        return float(curve.segments[curve.segment_index(x)](x))
    idx = np.clip(np.searchsorted(curve.boundaries, clamped, side="right") - 1, 0, curve.K - 1)
    out = np.empty_like(clamped)
    for i, seg in enumerate(curve.segments):
        sel = idx == i
        if sel.any():
            out[sel] = seg(clamped[sel])
    return out


def two_region_curve(d: float, cap: float) -> CostCurve:
    """``t/d`` below ``d``, ``1 + log2(min(t, cap)/d)`` above it.

    ``d=1`` gives the reference curve; any other ``d`` gives its rescaled
    two-region variant.
    """
    if not d > 0:
        raise CurveError("d must be > 0")
    if not cap > d:
        raise CurveError(f"cap ({cap}) must exceed d ({d})")
    return CostCurve((0.0, d, cap), (Linear(1.0 / d, 0.0), LogScaled(d)))


REFERENCE_CURVE = dict(d=1.0, cap=34.0)


# ---------------------------------------------------------------------------
# Reward schemes

@dataclass(frozen=True)
class CostSum:
    """Correct outcomes earn the summed curve value of their steps."""


@dataclass(frozen=True)
class Constant:
    value: float


@dataclass(frozen=True)
class RewardScheme:
    scheme_id: int
    correct_reward: CostSum | Constant
    wrong_penalty_multiplier: float
    curve: CostCurve

    def terminal_reward(self, correct, cost_sum):
        """Vectorized reward given correctness flags and summed curve values."""
        correct = np.asarray(correct, dtype=bool)
        cost_sum = np.asarray(cost_sum, dtype=float)
        if isinstance(self.correct_reward, CostSum):
            good = cost_sum
        else:
            good = np.full_like(cost_sum, self.correct_reward.value)
        return np.where(correct, good, -self.wrong_penalty_multiplier * cost_sum)


_SCHEMES = {
    1: (CostSum(), 1.0),
    2: (CostSum(), 10.0),
    3: (Constant(1.0), 1.0),
    4: (Constant(10.0), 1.0),
    5: (Constant(100.0), 1.0),
}


def make_scheme(scheme_id: int, curve: CostCurve | None = None) -> RewardScheme:
    if scheme_id not in _SCHEMES:
        raise ValueError(f"scheme out of 1..5: {scheme_id}")
    correct, mult = _SCHEMES[scheme_id]
    if curve is None:
        curve = two_region_curve(**REFERENCE_CURVE)
    return RewardScheme(scheme_id, correct, mult, curve)


def step_cost_sum(curve: CostCurve, step_costs: Sequence[float]) -> float:
    if len(step_costs) == 0:
        return 0.0
    return float(np.sum(curve_value(curve, np.asarray(step_costs, dtype=float))))


def episode_reward(scheme: RewardScheme, episode: Episode) -> float:
    total = step_cost_sum(scheme.curve, episode.step_costs)
    return float(scheme.terminal_reward(episode.outcome.correct, total))


# ---------------------------------------------------------------------------
# Metric goals

METRICS = ("recall", "precision", "accuracy", "f1")


@dataclass(frozen=True)
class MetricGoal:
    metric: str = "recall"
    lower: float = 0.95
    upper: float = 0.97
    bonus: float = 2.0
    batch: int = 256
    sign_mode: str = "literal"
    credit: str = "scale"

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if not 0 < self.lower < self.upper < 1:
            raise ValueError("need 0 < lower < upper < 1")
        if not self.bonus > 1:
            raise ValueError("bonus factor must be > 1")
        if self.batch < 1:
            raise ValueError("batch size must be >= 1")
        if self.sign_mode not in ("literal", "sign_preserving"):
            raise ValueError(f"unknown sign mode {self.sign_mode!r}")
        if self.credit not in ("scale", "share"):
            raise ValueError(f"unknown credit mode {self.credit!r}")


def batch_metric(metric: str, outcomes: Sequence[Outcome]) -> float | None:
    tp = sum(o is Outcome.TP for o in outcomes)
    tn = sum(o is Outcome.TN for o in outcomes)
    fp = sum(o is Outcome.FP for o in outcomes)
    fn = sum(o is Outcome.FN for o in outcomes)
    if metric == "recall":
        return tp / (tp + fn) if tp + fn else None
    if metric == "precision":
        return tp / (tp + fp) if tp + fp else None
    if metric == "accuracy":
        total = tp + tn + fp + fn
        return (tp + tn) / total if total else None
    if metric == "f1":
        return 2 * tp / (2 * tp + fp + fn) if tp else (0.0 if fp + fn else None)
    raise ValueError(f"unknown metric {metric!r}")


def adjust(goal: MetricGoal, m: float, value):
    """Apply the band adjustment to a reward (scalar or array)."""
    value = np.asarray(value, dtype=float)
    if goal.lower <= m < goal.upper:
        out = value
    elif goal.sign_mode == "literal":
        out = -goal.bonus * value if m < goal.lower else goal.bonus * value
    elif m < goal.lower:
        out = value - goal.bonus * np.abs(value)
    else:
        out = value + goal.bonus * np.abs(value)
    return float(out) if out.ndim == 0 else out


def batch_metric_reward(goal: MetricGoal, outcomes: Sequence[Outcome | Episode],
                        base_rewards: Sequence[float]) -> float:
    """Band-adjusted total reward of one batch of finished episodes."""
    outcomes = [o.outcome if isinstance(o, Episode) else Outcome(o) for o in outcomes]
    if len(outcomes) != len(base_rewards):
        raise ValueError("outcomes and base_rewards differ in length")
    cr = float(np.sum(base_rewards))
    m = batch_metric(goal.metric, outcomes)
    if m is None:
        warnings.warn(f"{goal.metric} undefined for this batch; reward left unadjusted",
                      RuntimeWarning, stacklevel=2)
        return cr
    return adjust(goal, m, cr)


def distribute(goal: MetricGoal, m: float | None, rewards) -> np.ndarray:
    """Push a batch adjustment down to its episodes' terminal rewards.

    ``scale`` applies the band rule to every episode reward. ``share`` adds
    an equal share of the batch-level change to each episode, which keeps
    the adjusted batch total and the ordering of episodes within the batch.
    """
    rewards = np.asarray(rewards, dtype=float)
    if m is None:
        warnings.warn(f"{goal.metric} undefined for this batch; rewards left unadjusted",
                      RuntimeWarning, stacklevel=2)
        return rewards.copy()
    if goal.credit == "scale":
        return np.asarray(adjust(goal, m, rewards), dtype=float).reshape(rewards.shape)
    total = float(rewards.sum())
    return rewards + (adjust(goal, m, total) - total) / len(rewards)


def batch_sampler(n_items: int, batch: int, epoch_seed: int, drop_last: bool = True) -> list[np.ndarray]:
    """Shuffle ``range(n_items)`` with ``epoch_seed`` and cut it into batches."""
    if batch < 1:
        raise ValueError("batch size must be >= 1")
    if batch > n_items:
        raise ValueError(f"batch size {batch} exceeds set size {n_items}")
    perm = np.random.default_rng(epoch_seed).permutation(n_items)
    stop = (n_items // batch) * batch if drop_last else n_items
    return [perm[i:i + batch] for i in range(0, stop, batch)]
