"""Actor-critic agent over the detector-selection process.

The network maps a state (``n`` detector entries, ``-1`` for unused
detectors) through one ReLU hidden layer to ``n+2`` policy logits and a
scalar value. Illegal actions are masked out of the softmax. Gradients are
computed by hand-written reverse-mode passes over the two layers; training
is advantage actor-critic with a FIFO replay buffer and RMSProp.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .env import UNSET, legal_mask
from .rewards import MetricGoal, RewardScheme, batch_metric, batch_sampler, curve_value, distribute
from .env import Outcome
from .scores import PHISHING, ScoreTable

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "cascadeforge-checkpoint"
CHECKPOINT_VERSION = 1


class NonFiniteError(FloatingPointError):
    pass


PARAM_NAMES = ("w1", "b1", "wp", "bp", "wv", "bv")


@dataclass
class PolicyParams:
    w1: np.ndarray  # (hidden, n)
    b1: np.ndarray  # (hidden,)
    wp: np.ndarray  # (n + 2, hidden)
    bp: np.ndarray  # (n + 2,)
    wv: np.ndarray  # (hidden,)
    bv: np.ndarray  # (1,)

    @classmethod
    def init(cls, n: int, hidden: int = 32, rng: np.random.Generator | None = None) -> "PolicyParams":
        rng = rng if rng is not None else np.random.default_rng(0)
        return cls(
            w1=rng.normal(0.0, np.sqrt(2.0 / n), (hidden, n)),
            b1=np.zeros(hidden),
            wp=rng.normal(0.0, 0.01, (n + 2, hidden)),
            bp=np.zeros(n + 2),
            wv=rng.normal(0.0, 0.01, hidden),
            bv=np.zeros(1),
        )

    @classmethod
    def zeros(cls, n: int, hidden: int = 32) -> "PolicyParams":
        return cls(np.zeros((hidden, n)), np.zeros(hidden), np.zeros((n + 2, hidden)),
                   np.zeros(n + 2), np.zeros(hidden), np.zeros(1))

    @property
    def n(self) -> int:
        return self.w1.shape[1]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @property
    def n_actions(self) -> int:
        return self.wp.shape[0]

    def arrays(self) -> list[np.ndarray]:
        return [getattr(self, k) for k in PARAM_NAMES]

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def with_flat(self, vec: np.ndarray) -> "PolicyParams":
        out, i = {}, 0
        for k, a in zip(PARAM_NAMES, self.arrays()):
            out[k] = np.asarray(vec[i:i + a.size], dtype=float).reshape(a.shape).copy()
            i += a.size
        return PolicyParams(**out)

    def copy(self) -> "PolicyParams":
        return PolicyParams(*(a.copy() for a in self.arrays()))

    def all_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass
class Forward:
    x: np.ndarray
    pre: np.ndarray
    h: np.ndarray
    logits: np.ndarray
    mask: np.ndarray
    probs: np.ndarray
    values: np.ndarray


def masked_softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=-1, keepdims=True)


def forward_batch(params: PolicyParams, states: np.ndarray) -> Forward:
    x = np.atleast_2d(np.asarray(states, dtype=float))
    pre = x @ params.w1.T + params.b1
    h = np.maximum(pre, 0.0)
    logits = h @ params.wp.T + params.bp
    values = h @ params.wv + params.bv[0]
    mask = legal_mask(x)
    probs = masked_softmax(logits, mask)
    if not (np.isfinite(probs).all() and np.isfinite(values).all()):
        raise NonFiniteError("non-finite activations in policy network")
    return Forward(x, pre, h, logits, mask, probs, values)


def forward(params: PolicyParams, state: np.ndarray) -> tuple[np.ndarray, float]:
    """Masked action distribution and value estimate for one state."""
    f = forward_batch(params, np.asarray(state, dtype=float)[None, :])
    return f.probs[0], float(f.values[0])


def choose_action(probs: np.ndarray, mode: str = "deterministic",
                  rng: np.random.Generator | None = None, u: float | None = None) -> int:
    """Argmax (lowest index on ties) or an inverse-CDF sample."""
    probs = np.asarray(probs, dtype=float)
    if mode == "deterministic":
        return int(np.argmax(probs))
    if mode != "stochastic":
        raise ValueError(f"unknown mode {mode!r}")
    if u is None:
        if rng is None:
            raise ValueError("stochastic mode needs an rng or a uniform draw")
        u = rng.random()
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(idx, int(np.flatnonzero(probs > 0)[-1]))


def act(params: PolicyParams, state: np.ndarray, mode: str = "deterministic",
        rng: np.random.Generator | None = None) -> int:
    probs, _ = forward(params, state)
    return choose_action(probs, mode, rng)


def input_gradient(params: PolicyParams, state: np.ndarray, target: Sequence[int]) -> tuple[float, np.ndarray]:
    """``log sum_{a in target} pi(a|state)`` and its gradient with respect to ``state``.

    The legality mask is treated as fixed, so entries equal to ``-1`` should
    not be moved by the caller.
    """
    f = forward_batch(params, np.asarray(state, dtype=float)[None, :])
    p = f.probs[0]
    sel = np.zeros_like(p, dtype=bool)
    sel[list(target)] = True
    sel &= f.mask[0]
    mass = p[sel].sum()
    if mass <= 0:
        raise ValueError("target actions carry no probability")
    dz = np.where(sel, p / mass, 0.0) - p
    dz = np.where(f.mask[0], dz, 0.0)
    dh = dz @ params.wp
    dpre = dh * (f.pre[0] > 0)
    return float(np.log(mass)), dpre @ params.w1


class AgentPolicy:
    """Adapter so a parameter snapshot can drive :func:`env.run_episode`."""

    def __init__(self, params: PolicyParams):
        self.params = params

    def __call__(self, state, mode="deterministic", rng=None) -> int:
        return act(self.params, state, mode, rng)


# ---------------------------------------------------------------------------
# Losses and gradients

@dataclass
class TransitionBatch:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    dones: np.ndarray
    returns: np.ndarray  # discounted reward-to-go of each transition

    def take(self, idx: np.ndarray) -> "TransitionBatch":
        return TransitionBatch(*(getattr(self, f.name)[idx] for f in fields(TransitionBatch)))

    def __len__(self) -> int:
        return len(self.actions)

    @staticmethod
    def concat(batches: Sequence["TransitionBatch"]) -> "TransitionBatch":
        return TransitionBatch(*(np.concatenate([getattr(b, f.name) for b in batches])
                                 for f in fields(TransitionBatch)))


def loss_and_grad(params: PolicyParams, states: np.ndarray, actions: np.ndarray,
                  targets: np.ndarray, advantages: np.ndarray,
                  value_coef: float = 0.5, entropy_coef: float = 0.01) -> tuple[float, PolicyParams]:
    """Mean actor-critic loss and its exact gradient.

    ``targets`` and ``advantages`` are constants of the loss:
    ``-A log pi(a|s) + c_v (target - V(s))^2 - c_e H(pi(.|s))``.
    """
    f = forward_batch(params, states)
    B = len(actions)
    rows = np.arange(B)
    p = f.probs
    with np.errstate(divide="ignore"):
        logp = np.where(f.mask, np.log(np.where(f.mask, p, 1.0)), 0.0)
    entropy = -(p * logp).sum(axis=1)
    loss = (-advantages * logp[rows, actions]
            + value_coef * (targets - f.values) ** 2
            - entropy_coef * entropy).mean()

    onehot = np.zeros_like(p)
    onehot[rows, actions] = 1.0
    dz = advantages[:, None] * (p - onehot)
    dz += entropy_coef * p * (logp + entropy[:, None])
    dz = np.where(f.mask, dz, 0.0) / B
    dv = 2.0 * value_coef * (f.values - targets) / B

    grads = PolicyParams(
        w1=np.empty_like(params.w1), b1=np.empty_like(params.b1),
        wp=dz.T @ f.h, bp=dz.sum(axis=0),
        wv=f.h.T @ dv, bv=np.array([dv.sum()]),
    )
    dh = dz @ params.wp + dv[:, None] * params.wv[None, :]
    dpre = dh * (f.pre > 0)
    grads.w1 = dpre.T @ f.x
    grads.b1 = dpre.sum(axis=0)
    if not (np.isfinite(loss) and grads.all_finite()):
        raise NonFiniteError("non-finite loss or gradient")
    return float(loss), grads


@dataclass
class TrainConfig:
    lr: float = 1e-3
    decay: float = 0.99
    eps: float = 1e-8
    gamma: float = 1.0
    epochs: int = 30
    seed: int = 0
    entropy_coef: float = 0.01
    entropy_start: float | None = None  # linear anneal from this value to entropy_coef
    value_coef: float = 0.5
    hidden: int = 32
    episodes_per_batch: int = 64
    updates_per_batch: int = 4
    minibatch: int = 128
    buffer_capacity: int = 5000
    warmup_episodes: int = 100
    normalize_advantages: bool = True
    target: str = "return"  # "return" (Monte Carlo) or "td" (one-step bootstrap)

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError("learning rate must be > 0")
        if not 0 < self.decay < 1:
            raise ValueError("decay must lie in (0, 1)")
        if not self.eps > 0:
            raise ValueError("eps must be > 0")
        if not 0 < self.gamma <= 1:
            raise ValueError("gamma must lie in (0, 1]")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.entropy_coef < 0 or self.value_coef < 0 or (self.entropy_start or 0) < 0:
            raise ValueError("loss coefficients must be >= 0")
        for name in ("hidden", "episodes_per_batch", "updates_per_batch", "minibatch",
                     "buffer_capacity"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.target not in ("return", "td"):
            raise ValueError(f"unknown value target {self.target!r}")
        if self.warmup_episodes < 0:
            raise ValueError("warmup_episodes must be >= 0")


def td_targets(params: PolicyParams, batch: TransitionBatch, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    """One-step bootstrapped targets and advantages under ``params``."""
    v = forward_batch(params, batch.states).values
    v_next = np.zeros(len(batch))
    live = ~batch.dones
    if live.any():
        v_next[live] = forward_batch(params, batch.next_states[live]).values
    targets = batch.rewards + gamma * v_next
    return targets, targets - v


def entropy_at(config: TrainConfig, epoch: int) -> float:
    """Entropy coefficient for a 1-based epoch."""
    if config.entropy_start is None or config.epochs == 1:
        return config.entropy_coef
    frac = (epoch - 1) / (config.epochs - 1)
    return config.entropy_start + frac * (config.entropy_coef - config.entropy_start)


def gradients(params: PolicyParams, batch: TransitionBatch, config: TrainConfig,
              entropy_coef: float | None = None) -> PolicyParams:
    if len(batch) == 0:
        raise ValueError("empty minibatch")
    if config.target == "td":
        targets, adv = td_targets(params, batch, config.gamma)
    else:
        targets = batch.returns
        adv = targets - forward_batch(params, batch.states).values
    if config.normalize_advantages and len(adv) > 1:
        # keeps the policy step size independent of the scheme's reward scale
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    _, grads = loss_and_grad(params, batch.states, batch.actions, targets, adv,
                             config.value_coef,
                             config.entropy_coef if entropy_coef is None else entropy_coef)
    return grads


class RMSProp:
    """Single-process RMSProp: ``ms = a ms + (1-a) g^2``, ``p -= lr g / sqrt(ms + eps)``."""

    def __init__(self, params: PolicyParams, lr: float = 1e-3, decay: float = 0.99, eps: float = 1e-8):
        self.lr, self.decay, self.eps = lr, decay, eps
        self.ms = [np.zeros_like(a) for a in params.arrays()]

    def step(self, params: PolicyParams, grads: PolicyParams) -> None:
        for ms, p, g in zip(self.ms, params.arrays(), grads.arrays()):
            ms *= self.decay
            ms += (1.0 - self.decay) * g * g
            p -= self.lr * g / np.sqrt(ms + self.eps)


class ReplayBuffer:
    """FIFO ring buffer of transitions."""

    def __init__(self, n: int, capacity: int = 5000):
        self.capacity = capacity
        self.data = TransitionBatch(
            states=np.zeros((capacity, n)), actions=np.zeros(capacity, dtype=np.int64),
            rewards=np.zeros(capacity), next_states=np.zeros((capacity, n)),
            dones=np.zeros(capacity, dtype=bool), returns=np.zeros(capacity))
        self.ptr = 0
        self.size = 0

    def __len__(self) -> int:
        return self.size

    def add(self, batch: TransitionBatch) -> None:
        k = len(batch)
        if k >= self.capacity:
            batch, k = batch.take(np.arange(k - self.capacity, k)), self.capacity
        slots = (self.ptr + np.arange(k)) % self.capacity
        for f in fields(TransitionBatch):
            getattr(self.data, f.name)[slots] = getattr(batch, f.name)
        self.ptr = (self.ptr + k) % self.capacity
        self.size = min(self.size + k, self.capacity)

    def sample(self, k: int, rng: np.random.Generator) -> TransitionBatch:
        return self.data.take(rng.integers(0, self.size, size=k))


# ---------------------------------------------------------------------------
# Vectorized episodes

@dataclass
class Rollout:
    """Episodes for a batch of samples, padded to ``n+1`` steps."""

    states: np.ndarray        # (B, n+1, n) state before each action
    actions: np.ndarray       # (B, n+1), -1 after termination
    steps: np.ndarray         # (B,) actions taken including the classification
    predicted: np.ndarray     # (B,)
    step_costs: np.ndarray    # (B, n+1), 0 for classify and padding
    terminal_probs: np.ndarray  # (B, n+2) distribution at the decision state

    @property
    def invoked(self) -> np.ndarray:
        """(B, n+1) True where the action invoked a detector."""
        n = self.states.shape[2]
        return (self.actions >= 0) & (self.actions < n)

    @property
    def total_cost(self) -> np.ndarray:
        return self.step_costs.sum(axis=1)

    @property
    def n_invoked(self) -> np.ndarray:
        return self.invoked.sum(axis=1)

    @property
    def confidence(self) -> np.ndarray:
        """Phishing probability renormalized over the two classify actions."""
        n = self.states.shape[2]
        pb, pp = self.terminal_probs[:, n], self.terminal_probs[:, n + 1]
        return pp / (pb + pp)


def rollout(params: PolicyParams, scores: np.ndarray, costs: np.ndarray,
            mode: str = "deterministic", rng: np.random.Generator | None = None,
            uniforms: np.ndarray | None = None) -> Rollout:
    scores = np.atleast_2d(scores)
    costs = np.atleast_2d(costs)
    B, n = scores.shape
    T = n + 1
    if mode == "stochastic" and uniforms is None:
        if rng is None:
            raise ValueError("stochastic rollout needs an rng or uniforms")
        uniforms = rng.random((B, T))
    states = np.full((B, T, n), UNSET)
    actions = np.full((B, T), -1, dtype=np.int64)
    step_costs = np.zeros((B, T))
    steps = np.zeros(B, dtype=np.int64)
    predicted = np.full(B, -1, dtype=np.int64)
    terminal_probs = np.zeros((B, n + 2))
    cur = np.full((B, n), UNSET)
    active = np.arange(B)
    for t in range(T):
        if len(active) == 0:
            break
        states[active, t] = cur[active]
        probs = forward_batch(params, cur[active]).probs
        if mode == "deterministic":
            a = probs.argmax(axis=1)
        else:
            cdf = np.cumsum(probs, axis=1)
            u = uniforms[active, t][:, None] * cdf[:, -1:]
            a = (cdf <= u).sum(axis=1)
            last_legal = n + 1  # classify(phishing) is always legal
            a = np.minimum(a, last_legal)
        actions[active, t] = a
        steps[active] += 1
        inv = a < n
        if inv.any():
            rows, det = active[inv], a[inv]
            cur[rows, det] = scores[rows, det]
            step_costs[rows, t] = costs[rows, det]
        done = ~inv
        if done.any():
            rows = active[done]
            predicted[rows] = a[done] - n
            terminal_probs[rows] = probs[done]
        active = active[inv]
    return Rollout(states, actions, steps, predicted, step_costs, terminal_probs)


def rollout_rewards(scheme: RewardScheme, ro: Rollout, labels: np.ndarray) -> np.ndarray:
    vals = np.where(ro.invoked, curve_value(scheme.curve, ro.step_costs), 0.0)
    correct = ro.predicted == labels
    return scheme.terminal_reward(correct, vals.sum(axis=1))


def rollout_outcomes(ro: Rollout, labels: np.ndarray) -> list[Outcome]:
    out = []
    for p, y in zip(ro.predicted, labels):
        if p == PHISHING:
            out.append(Outcome.TP if y == PHISHING else Outcome.FP)
        else:
            out.append(Outcome.FN if y == PHISHING else Outcome.TN)
    return out


def rollout_transitions(ro: Rollout, terminal_rewards: np.ndarray, gamma: float = 1.0) -> TransitionBatch:
    B, T, n = ro.states.shape
    b_idx, t_idx = np.nonzero(ro.actions >= 0)
    terminal = t_idx == ro.steps[b_idx] - 1
    nxt = np.zeros((len(b_idx), n))
    live = ~terminal
    nxt[live] = ro.states[b_idx[live], t_idx[live] + 1]
    rewards = np.where(terminal, terminal_rewards[b_idx], 0.0)
    to_go = ro.steps[b_idx] - 1 - t_idx
    returns = terminal_rewards[b_idx] * gamma ** to_go
    return TransitionBatch(ro.states[b_idx, t_idx], ro.actions[b_idx, t_idx], rewards, nxt,
                           terminal, returns)


# ---------------------------------------------------------------------------
# Training

@dataclass
class EpochLog:
    epoch: int
    train_reward: float
    val_reward: float
    best: bool


@dataclass
class TrainResult:
    params: PolicyParams
    best_epoch: int
    history: list[EpochLog] = field(default_factory=list)
    config: TrainConfig | None = None


def mean_reward(params: PolicyParams, table: ScoreTable, scheme: RewardScheme,
                goal: MetricGoal | None = None) -> float:
    """Mean deterministic episode reward; with a goal, consecutive chunks of
    ``goal.batch`` episodes are band-adjusted first."""
    ro = rollout(params, table.scores, table.costs, "deterministic")
    rewards = rollout_rewards(scheme, ro, table.labels)
    if goal is not None:
        outcomes = rollout_outcomes(ro, table.labels)
        for start in range(0, len(rewards), goal.batch):
            sl = slice(start, start + goal.batch)
            rewards[sl] = distribute(goal, batch_metric(goal.metric, outcomes[sl]), rewards[sl])
    return float(rewards.mean())


def train(train_table: ScoreTable, val_table: ScoreTable, scheme: RewardScheme,
          goal: MetricGoal | None = None, config: TrainConfig | None = None,
          init_params: PolicyParams | None = None) -> TrainResult:
    """Train an agent; returns the parameters of the best validation epoch.

    Episodes are collected in batches (``goal.batch`` episodes when a metric
    goal is set, else ``config.episodes_per_batch``) sampled without
    replacement from a per-epoch shuffle. With a goal, every terminal reward
    of a batch is passed through the band adjustment of that batch's metric
    before it is stored. Gradient steps use the fresh transitions, plus an
    equal number of replayed ones once ``warmup_episodes`` episodes have
    been collected.
    """
    config = config or TrainConfig()
    n = train_table.n_detectors
    rng = np.random.default_rng(config.seed)
    params = PolicyParams.init(n, config.hidden, np.random.default_rng(rng.integers(2**63)))
    if init_params is not None:
        if (init_params.n, init_params.hidden) != (n, config.hidden):
            raise ValueError("initial parameters do not match the pool size or hidden width")
        params = init_params.copy()
    opt = RMSProp(params, config.lr, config.decay, config.eps)
    buffer = ReplayBuffer(n, config.buffer_capacity)
    roll_rng = np.random.default_rng(rng.integers(2**63))
    sample_rng = np.random.default_rng(rng.integers(2**63))
    epoch_seed0 = int(rng.integers(2**31))
    batch_size = goal.batch if goal is not None else config.episodes_per_batch
    batch_size = min(batch_size, len(train_table))

    best = params.copy()
    best_val = mean_reward(params, val_table, scheme, goal)
    best_epoch = 0
    history = []
    episodes_seen = 0
    for epoch in range(1, config.epochs + 1):
        batches = batch_sampler(len(train_table), batch_size, epoch_seed0 + epoch,
                                drop_last=goal is not None)
        epoch_rewards = []
        ent = entropy_at(config, epoch)
        for idx in batches:
            labels = train_table.labels[idx]
            ro = rollout(params, train_table.scores[idx], train_table.costs[idx],
                         "stochastic", roll_rng)
            rewards = rollout_rewards(scheme, ro, labels)
            epoch_rewards.append(rewards.mean())
            if goal is not None:
                rewards = distribute(goal, batch_metric(goal.metric, rollout_outcomes(ro, labels)), rewards)
            fresh = rollout_transitions(ro, rewards, config.gamma)
            episodes_seen += len(idx)
            use_replay = episodes_seen > config.warmup_episodes and len(buffer) > 0
            for _ in range(config.updates_per_batch):
                k = min(config.minibatch, len(fresh))
                parts = [fresh.take(sample_rng.choice(len(fresh), k, replace=False))]
                if use_replay:
                    parts.append(buffer.sample(k, sample_rng))
                grads = gradients(params, TransitionBatch.concat(parts), config, ent)
                opt.step(params, grads)
                if not params.all_finite():
                    raise NonFiniteError(f"parameters diverged in epoch {epoch}")
            buffer.add(fresh)
        val = mean_reward(params, val_table, scheme, goal)
        improved = val > best_val
        if improved:
            best, best_val, best_epoch = params.copy(), val, epoch
        history.append(EpochLog(epoch, float(np.mean(epoch_rewards)), val, improved))
        log.debug("epoch %d train %.4f val %.4f", epoch, history[-1].train_reward, val)
    return TrainResult(best, best_epoch, history, config)


# ---------------------------------------------------------------------------
# Checkpoints

def save_checkpoint(path: str | Path, params: PolicyParams, config: TrainConfig | None = None,
                    detector_ids: Sequence[str] = (), extra: dict | None = None) -> None:
    """JSON container; arrays are stored row-major as float64 lists."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layer_sizes": [params.n, params.hidden, params.n_actions],
        "detector_ids": list(detector_ids),
        "weights": {k: [float(x) for x in a.ravel(order="C")] for k, a in zip(PARAM_NAMES, params.arrays())},
        "train_config": asdict(config) if config is not None else None,
        "seed": config.seed if config is not None else None,
        "extra": extra or {},
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True), encoding="utf-8")


def load_checkpoint(path: str | Path) -> tuple[PolicyParams, dict]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a checkpoint file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('version')}")
    n, hidden, n_act = doc["layer_sizes"]
    shapes = {"w1": (hidden, n), "b1": (hidden,), "wp": (n_act, hidden), "bp": (n_act,),
              "wv": (hidden,), "bv": (1,)}
    arrays = {k: np.array(doc["weights"][k], dtype=np.float64).reshape(shapes[k]) for k in PARAM_NAMES}
    return PolicyParams(**arrays), doc
