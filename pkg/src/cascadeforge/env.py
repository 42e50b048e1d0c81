"""Per-sample decision process over a detector pool.

Actions are integers. With ``n`` detectors, ``0..n-1`` invoke a detector,
``n`` classifies the sample benign and ``n+1`` classifies it phishing.
A state is a length-``n`` float vector holding each invoked detector's
score and ``-1`` for detectors not yet run.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Protocol

import numpy as np

from .scores import BENIGN, PHISHING, SampleRecord

UNSET = -1.0


class IllegalActionError(ValueError):
    pass


class Outcome(str, Enum):
    TP = "TP"
    TN = "TN"
    FP = "FP"
    FN = "FN"

    @property
    def correct(self) -> bool:
        return self in (Outcome.TP, Outcome.TN)


def outcome_of(predicted: int, label: int) -> Outcome:
    if predicted == PHISHING:
        return Outcome.TP if label == PHISHING else Outcome.FP
    return Outcome.TN if label == BENIGN else Outcome.FN


def n_actions(n: int) -> int:
    return n + 2


def classify_action(n: int, cls: int) -> int:
    return n + cls


def is_classify(action: int, n: int) -> bool:
    return action >= n


def describe_action(action: int, n: int) -> str:
    if action < n:
        return f"invoke({action})"
    return "classify(phishing)" if action == n + 1 else "classify(benign)"


def initial_state(n: int) -> np.ndarray:
    if n < 1:
        raise ValueError("need at least one detector")
    return np.full(n, UNSET)


def legal_mask(state: np.ndarray) -> np.ndarray:
    """Boolean mask over the ``n+2`` actions; works on batches of states too."""
    state = np.asarray(state)
    invoke = state == UNSET
    classify = np.ones(state.shape[:-1] + (2,), dtype=bool)
    return np.concatenate([invoke, classify], axis=-1)


def legal_actions(state: np.ndarray) -> frozenset[int]:
    return frozenset(int(a) for a in np.flatnonzero(legal_mask(state)))


@dataclass(frozen=True)
class Transition:
    state: np.ndarray
    action: int
    next_state: np.ndarray | None  # None when the action classified
    terminal_class: int | None
    step_cost: float

    @property
    def terminal(self) -> bool:
        return self.terminal_class is not None


def step(state: np.ndarray, action: int, sample: SampleRecord) -> Transition:
    state = np.asarray(state, dtype=np.float64)
    n = len(state)
    if not 0 <= action < n + 2:
        raise IllegalActionError(f"action {action} outside 0..{n + 1}")
    if action >= n:
        return Transition(state.copy(), action, None, action - n, 0.0)
    if state[action] != UNSET:
        raise IllegalActionError(f"detector {action} already invoked")
    nxt = state.copy()
    nxt[action] = sample.scores[action]
    return Transition(state.copy(), action, nxt, None, float(sample.costs[action]))


@dataclass
class Episode:
    sample_id: str
    label: int
    transitions: list[Transition] = field(default_factory=list)

    @property
    def predicted(self) -> int:
        last = self.transitions[-1]
        if last.terminal_class is None:
            raise ValueError("episode has not terminated")
        return last.terminal_class

    @property
    def outcome(self) -> Outcome:
        return outcome_of(self.predicted, self.label)

    @property
    def total_cost(self) -> float:
        return float(sum(t.step_cost for t in self.transitions))

    @property
    def step_costs(self) -> list[float]:
        return [t.step_cost for t in self.transitions if not t.terminal]

    @property
    def invoked(self) -> list[int]:
        return [t.action for t in self.transitions if not t.terminal]

    @property
    def decision_state(self) -> np.ndarray:
        """State in which the final classification was issued."""
        return self.transitions[-1].state

    def __len__(self) -> int:
        return len(self.transitions)


class Policy(Protocol):
    def __call__(self, state: np.ndarray, mode: str, rng: np.random.Generator | None) -> int: ...


def run_episode(policy: Policy | Callable, sample: SampleRecord, mode: str = "deterministic",
                rng: np.random.Generator | None = None) -> Episode:
    """Roll ``policy`` on one sample until it classifies.

    The policy sees only the current state. Once every detector has been
    invoked only the two classify actions are legal, so at most ``n+1``
    actions are taken.
    """
    if mode not in ("deterministic", "stochastic"):
        raise ValueError(f"unknown mode {mode!r}")
    state = initial_state(sample.n)
    ep = Episode(sample.sample_id, sample.label)
    for _ in range(sample.n + 1):
        action = int(policy(state, mode, rng))
        if action not in legal_actions(state):
            raise IllegalActionError(f"policy chose illegal {describe_action(action, sample.n)}")
        tr = step(state, action, sample)
        ep.transitions.append(tr)
        if tr.terminal:
            return ep
        state = tr.next_state
    raise IllegalActionError("policy did not classify after exhausting all detectors")
