"""Bounded score-perturbation attacks on trained agents and static ensembles.

White-box attacks replay the agent and, once ``t`` detectors have been
invoked, move the observed scores by at most ``eps_t`` in L-infinity before
the agent picks its next action. Perturbations persist, so the total drift
of any entry is bounded by the schedule's sum. Black-box attacks flip a fair
coin per score and add or subtract ``eps``.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Union

import numpy as np

from .agent import PolicyParams, forward_batch, rollout
from .baselines import StaticEnsemble, aggregate_table, classify
from .env import UNSET
from .scores import BENIGN, PHISHING, SampleRecord, ScoreTable

GOALS = ("evade", "resource")
METHODS = ("fgsm", "pgd")


# ---------------------------------------------------------------------------
# Budget schedules

@dataclass(frozen=True)
class AllAtOnce:
    k: int = 1


@dataclass(frozen=True)
class Uniform:
    pass


@dataclass(frozen=True)
class Geometric:
    q: float = 0.5

    def __post_init__(self):
        if not 0 < self.q <= 0.5:
            raise ValueError(f"geometric ratio must lie in (0, 0.5], got {self.q}")


Schedule = Union[AllAtOnce, Uniform, Geometric]


def schedule_budgets(schedule: Schedule, epsilon: float, n: int) -> np.ndarray:
    """Per-opportunity budgets; entry ``t-1`` applies once ``t`` detectors ran."""
    if not epsilon >= 0 or not math.isfinite(epsilon):
        raise ValueError("epsilon must be finite and >= 0")
    if n < 1:
        raise ValueError("n must be >= 1")
    if isinstance(schedule, AllAtOnce):
        if not 1 <= schedule.k <= n:
            raise ValueError(f"all-at-once step {schedule.k} outside 1..{n}")
        out = np.zeros(n)
        out[schedule.k - 1] = epsilon
        return out
    if isinstance(schedule, Uniform):
        return np.full(n, epsilon / n)
    if isinstance(schedule, Geometric):
        return epsilon * schedule.q ** np.arange(1, n + 1)
    raise TypeError(f"unknown schedule {schedule!r}")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float
    schedule: Schedule = field(default_factory=Uniform)
    method: str = "pgd"
    pgd_steps: int = 10
    pgd_step_frac: float = 0.25
    goal: str = "evade"
    defense: str = "deterministic"
    runs: int = 10
    rounds: int = 3
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ValueError("epsilon must be >= 0")
        if self.method not in METHODS:
            raise ValueError(f"unknown attack method {self.method!r}")
        if self.goal not in GOALS:
            raise ValueError(f"unknown attack goal {self.goal!r}")
        if self.defense not in ("deterministic", "stochastic"):
            raise ValueError(f"unknown defense {self.defense!r}")
        if self.pgd_steps < 1 or not self.pgd_step_frac > 0:
            raise ValueError("pgd needs steps >= 1 and a positive step fraction")
        if self.runs < 1 or self.rounds < 1:
            raise ValueError("runs and rounds must be >= 1")

    def echo(self) -> dict:
        d = asdict(self)
        d["schedule"] = {"kind": type(self.schedule).__name__, **asdict(self.schedule)}
        return d


# ---------------------------------------------------------------------------
# White-box attack

@dataclass
class AttackOutcome:
    sample_id: str
    success: bool
    reason: str | None
    clean_actions: list[int]
    perturbed_actions: list[int]
    perturbed_trajectory: np.ndarray  # (steps, n) states the policy actually saw
    detectors_changed: int
    mean_perturbation_magnitude: float
    budget_used: float
    original_cost: float
    perturbed_cost: float


def _input_gradient(params: PolicyParams, states: np.ndarray, target: np.ndarray):
    """Gradient of ``log sum_{a in target} pi(a|s)`` for a batch of states."""
    f = forward_batch(params, states)
    p = f.probs
    sel = target & f.mask
    mass = np.maximum((p * sel).sum(axis=1, keepdims=True), 1e-300)
    dz = np.where(sel, p / mass, 0.0) - p
    dz = np.where(f.mask, dz, 0.0)
    dpre = (dz @ params.wp) * (f.pre > 0)
    return dpre @ params.w1


def _perturb(params, s, budget, target, config: AttackConfig) -> np.ndarray:
    """Perturbed copy of states ``s`` (rows with budget 0 come back unchanged)."""
    movable = (s != UNSET) & (budget[:, None] > 0)
    if not movable.any():
        return s.copy()
    eps = budget[:, None]
    if config.method == "fgsm":
        g = _input_gradient(params, s, target)
        w = s + eps * np.sign(g)
    else:
        w = s.copy()
        step = config.pgd_step_frac * eps
        for _ in range(config.pgd_steps):
            g = _input_gradient(params, w, target)
            w = np.clip(w + step * np.sign(g), s - eps, s + eps)
            w = np.where(movable, np.clip(w, 0.0, 1.0), s)
    return np.where(movable, np.clip(w, 0.0, 1.0), s)


def _choose(probs: np.ndarray, u: np.ndarray | None) -> np.ndarray:
    if u is None:
        return probs.argmax(axis=1)
    cdf = np.cumsum(probs, axis=1)
    a = (cdf <= u[:, None] * cdf[:, -1:]).sum(axis=1)
    return np.minimum(a, probs.shape[1] - 1)


@dataclass
class BatchAttack:
    """Arrays describing one white-box attack per row."""

    success: np.ndarray
    reason: list[str | None]
    clean_actions: np.ndarray
    actions: np.ndarray
    seen: np.ndarray
    budget_used: np.ndarray
    detectors_changed: np.ndarray
    magnitude: np.ndarray
    clean_cost: np.ndarray
    perturbed_cost: np.ndarray


def attack_batch(params: PolicyParams, scores: np.ndarray, costs: np.ndarray, labels: np.ndarray,
                 config: AttackConfig, uniforms: np.ndarray | None = None) -> BatchAttack:
    scores, costs = np.atleast_2d(scores), np.atleast_2d(costs)
    B, n = scores.shape
    T = n + 1
    mode = "deterministic" if uniforms is None else "stochastic"
    clean = rollout(params, scores, costs, mode, uniforms=uniforms)
    budgets = schedule_budgets(config.schedule, config.epsilon, n)

    s = np.full((B, n), UNSET)  # observed (possibly perturbed) state
    seen = np.full((B, T, n), UNSET)
    actions = np.full((B, T), -1, dtype=np.int64)
    used = np.zeros(B)
    cost = np.zeros(B)
    n_inv = np.zeros(B, dtype=np.int64)
    predicted = np.full(B, -1, dtype=np.int64)
    active = np.arange(B)
    for t in range(T):
        if len(active) == 0:
            break
        cur = s[active]
        k = n_inv[active]
        budget = np.where(k >= 1, budgets[np.maximum(k, 1) - 1], 0.0)
        target = np.zeros((len(active), n + 2), dtype=bool)
        if config.goal == "evade":
            target[:, n + BENIGN] = True
        else:
            can_invoke = (cur == UNSET).any(axis=1) & (k <= clean.n_invoked[active])
            target[:, :n] = (cur == UNSET) & can_invoke[:, None]
            keep = ~can_invoke
            target[keep, n + clean.predicted[active[keep]]] = True
        w = _perturb(params, cur, budget, target, config)
        used[active] += np.abs(w - cur).max(axis=1)
        seen[active, t] = w
        probs = forward_batch(params, w).probs
        a = _choose(probs, None if uniforms is None else uniforms[active, t])
        actions[active, t] = a
        s[active] = w
        inv = a < n
        rows, det = active[inv], a[inv]
        s[rows, det] = scores[rows, det]
        cost[rows] += costs[rows, det]
        n_inv[rows] += 1
        predicted[active[~inv]] = a[~inv] - n
        active = active[inv]

    observed = s != UNSET
    diff = np.where(observed, np.abs(s - np.where(observed, scores, UNSET)), 0.0)
    changed = (diff > 0).sum(axis=1)
    magnitude = np.where(changed > 0, diff.sum(axis=1) / np.maximum(changed, 1), 0.0)

    reason: list[str | None] = [None] * B
    nothing = clean.n_invoked == 0
    if config.goal == "evade":
        eligible = (labels == PHISHING) & (clean.predicted == PHISHING)
        success = eligible & (predicted == BENIGN) & ~nothing
        for i in np.flatnonzero(~eligible):
            reason[i] = "clean run does not detect this phishing sample"
    else:
        more = (cost > clean.total_cost) | (n_inv > clean.n_invoked)
        success = (predicted == clean.predicted) & more & ~nothing
    for i in np.flatnonzero(nothing):
        reason[i] = "clean policy invoked no detector; nothing to perturb"
    return BatchAttack(success, reason, clean.actions, actions, seen, used, changed, magnitude,
                       clean.total_cost, cost)


def white_box_attack(params: PolicyParams, sample: SampleRecord, config: AttackConfig,
                     uniforms: np.ndarray | None = None) -> AttackOutcome:
    if config.goal == "evade" and sample.label != PHISHING:
        raise ValueError("evasion attacks target phishing samples")
    scores = np.array([sample.scores])
    costs = np.array([sample.costs])
    u = None if uniforms is None else np.atleast_2d(uniforms)
    r = attack_batch(params, scores, costs, np.array([sample.label]), config, u)
    steps = int((r.actions[0] >= 0).sum())
    return AttackOutcome(
        sample_id=sample.sample_id,
        success=bool(r.success[0]),
        reason=r.reason[0],
        clean_actions=[int(a) for a in r.clean_actions[0] if a >= 0],
        perturbed_actions=[int(a) for a in r.actions[0][:steps]],
        perturbed_trajectory=r.seen[0, :steps].copy(),
        detectors_changed=int(r.detectors_changed[0]),
        mean_perturbation_magnitude=float(r.magnitude[0]),
        budget_used=float(r.budget_used[0]),
        original_cost=float(r.clean_cost[0]),
        perturbed_cost=float(r.perturbed_cost[0]),
    )


# ---------------------------------------------------------------------------
# Black-box attack

def black_box_scores(scores: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    scores = np.asarray(scores, dtype=float)
    signs = np.where(rng.random(scores.shape) < 0.5, -1.0, 1.0)
    return np.clip(scores + signs * epsilon, 0.0, 1.0)


def black_box_attack(sample: SampleRecord, epsilon: float, rng: np.random.Generator) -> SampleRecord:
    """Every score moves by +eps or -eps on a fair coin, then is clamped."""
    new = black_box_scores(np.array(sample.scores), epsilon, rng)
    return SampleRecord(sample.sample_id, sample.label, tuple(float(x) for x in new), sample.costs)


# ---------------------------------------------------------------------------
# Campaigns

@dataclass
class CampaignReport:
    target: str
    attack: str
    config: dict
    n_samples: int
    round_rates: list[float]
    success_rate: float | None
    mean_detectors_changed: float | None
    mean_perturbation: float | None
    max_budget_used: float
    note: str | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())


Target = Union[PolicyParams, StaticEnsemble]


def _pool(table: ScoreTable, goal: str) -> np.ndarray:
    if goal == "evade":
        return np.flatnonzero(table.labels == PHISHING)
    return np.arange(len(table))


def _invoked_detectors(actions: np.ndarray, n: int) -> np.ndarray:
    """(B, n) mask of detectors a rollout invoked."""
    out = np.zeros((len(actions), n), dtype=bool)
    rows, cols = np.nonzero((actions >= 0) & (actions < n))
    out[rows, actions[rows, cols]] = True
    return out


def _black_box_agent(params, scores, attacked, costs, labels, goal, uniforms):
    """Success flags and the mask of perturbed scores the agent actually read."""
    mode = "deterministic" if uniforms is None else "stochastic"
    clean = rollout(params, scores, costs, mode, uniforms=uniforms)
    pert = rollout(params, attacked, costs, mode, uniforms=uniforms)
    if goal == "evade":
        ok = (labels == PHISHING) & (clean.predicted == PHISHING) & (pert.predicted == BENIGN)
    else:
        more = (pert.total_cost > clean.total_cost) | (pert.n_invoked > clean.n_invoked)
        ok = (pert.predicted == clean.predicted) & more
    return ok, _invoked_detectors(pert.actions, scores.shape[1])


def run_campaign(target: Target, table: ScoreTable, config: AttackConfig, n_samples: int,
                 attack: str = "white") -> CampaignReport:
    """Average success over ``config.rounds`` seeded draws of ``n_samples`` samples.

    Static ensembles only admit the black-box attack. With the stochastic
    defense every sample is attacked ``config.runs`` times and clean and
    attacked runs share their random draws.
    """
    is_agent = isinstance(target, PolicyParams)
    if attack not in ("white", "black"):
        raise ValueError(f"unknown attack kind {attack!r}")
    if not is_agent and attack == "white":
        raise ValueError("gradient attacks need an agent; use the black-box attack for ensembles")
    if not is_agent and config.goal == "resource":
        raise ValueError("static ensembles have fixed cost; resource attacks do not apply")
    name = "agent" if is_agent else f"{target.name(table.detector_ids)} [{target.rule}]"
    pool = _pool(table, config.goal)
    if n_samples > len(pool):
        raise ValueError(f"n_samples {n_samples} exceeds the {len(pool)} eligible samples")
    if n_samples == 0:
        return CampaignReport(name, attack, config.echo(), 0, [], None, None, None, 0.0,
                              note="no samples attacked; success rate undefined")
    n = table.n_detectors
    runs = config.runs if (is_agent and config.defense == "stochastic") else 1
    rates, changed, mags = [], [], []
    max_used = 0.0
    for rnd in range(config.rounds):
        rng = np.random.default_rng([config.seed, rnd])
        idx = np.sort(rng.choice(pool, n_samples, replace=False))
        sc, co, lab = table.scores[idx], table.costs[idx], table.labels[idx]
        wins = np.zeros(n_samples)
        for _ in range(runs):
            u = rng.random((n_samples, n + 1)) if is_agent and config.defense == "stochastic" else None
            if attack == "white":
                r = attack_batch(target, sc, co, lab, config, u)
                wins += r.success
                changed.append(r.detectors_changed)
                mags.append(r.magnitude[r.detectors_changed > 0])
                max_used = max(max_used, float(r.budget_used.max()))
            else:
                attacked = black_box_scores(sc, config.epsilon, rng)
                diff = np.abs(attacked - sc)
                max_used = max(max_used, float(diff.max()))
                if is_agent:
                    ok, read = _black_box_agent(target, sc, attacked, co, lab, config.goal, u)
                    d = np.where(read, diff, 0.0)
                else:
                    conf0, _ = aggregate_table(target, sc, co)
                    conf1, _ = aggregate_table(target, attacked, co)
                    ok = (lab == PHISHING) & (classify(conf0) == PHISHING) & (classify(conf1) == BENIGN)
                    cols = np.zeros(n, dtype=bool)
                    cols[list(target.subset)] = True
                    d = np.where(cols[None, :], diff, 0.0)
                wins += ok
                ch = (d > 0).sum(axis=1)
                changed.append(ch)
                mags.append(d.sum(axis=1)[ch > 0] / ch[ch > 0])
        rates.append(float(wins.mean() / runs))
    all_changed = np.concatenate(changed)
    all_mags = np.concatenate(mags)
    return CampaignReport(
        target=name, attack=attack, config=config.echo(), n_samples=n_samples,
        round_rates=rates, success_rate=float(np.mean(rates)),
        mean_detectors_changed=float(all_changed.mean()),
        mean_perturbation=float(all_mags.mean()) if len(all_mags) else 0.0,
        max_budget_used=max_used,
    )
