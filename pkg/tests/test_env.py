import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascadeforge.env import (
    UNSET, IllegalActionError, Outcome, initial_state, legal_actions, legal_mask, n_actions,
    outcome_of, run_episode, step,
)
from cascadeforge.scores import SampleRecord

SAMPLE = SampleRecord("s", 1, (0.9, 0.2), (1.5, 0.1))


def test_initial_state():
    np.testing.assert_array_equal(initial_state(5), [-1.0] * 5)
    np.testing.assert_array_equal(initial_state(1), [-1.0])
    with pytest.raises(ValueError):
        initial_state(0)


def test_legal_actions():
    assert n_actions(3) == 5
    assert legal_actions(initial_state(3)) == {0, 1, 2, 3, 4}
    assert legal_actions(np.array([0.4, UNSET])) == {1, 2, 3}
    assert legal_actions(np.array([0.4, 0.7])) == {2, 3}


def test_legal_mask_batches():
    m = legal_mask(np.array([[UNSET, 0.3], [0.1, 0.2]]))
    assert m.shape == (2, 4)
    assert m.tolist() == [[True, False, True, True], [False, False, True, True]]


def test_step_invoke_then_classify():
    tr = step(initial_state(2), 0, SAMPLE)
    np.testing.assert_array_equal(tr.next_state, [0.9, UNSET])
    assert tr.step_cost == 1.5 and not tr.terminal
    fin = step(tr.next_state, 3, SAMPLE)
    assert fin.terminal and fin.terminal_class == 1 and fin.step_cost == 0.0
    with pytest.raises(IllegalActionError):
        step(tr.next_state, 0, SAMPLE)
    with pytest.raises(IllegalActionError):
        step(tr.next_state, 4, SAMPLE)


def test_episode_bookkeeping():
    ep = run_episode(lambda s, mode, rng: 0 if s[0] == UNSET else 3, SAMPLE)
    assert ep.outcome is Outcome.TP
    assert ep.total_cost == 1.5
    assert len(ep) == 2


def test_always_benign_policy():
    ep = run_episode(lambda s, mode, rng: 2, SAMPLE)
    assert len(ep) == 1 and ep.total_cost == 0.0 and ep.predicted == 0


def test_invoke_all_then_mean_rule():
    def policy(s, mode, rng):
        free = np.flatnonzero(s == UNSET)
        if len(free):
            return int(free[0])
        return 2 + int(s.mean() >= 0.5)

    ep = run_episode(policy, SAMPLE)
    assert ep.total_cost == pytest.approx(1.6)
    assert ep.predicted == 1


def test_stochastic_episode_is_seeded():
    def policy(s, mode, rng):
        return int(rng.choice(sorted(legal_actions(s))))

    a = run_episode(policy, SAMPLE, "stochastic", np.random.default_rng(4))
    b = run_episode(policy, SAMPLE, "stochastic", np.random.default_rng(4))
    assert [t.action for t in a.transitions] == [t.action for t in b.transitions]


def test_illegal_policy_is_reported():
    with pytest.raises(IllegalActionError):
        run_episode(lambda s, mode, rng: 0, SAMPLE)


def test_outcome_mapping_is_exhaustive():
    table = {(1, 1): Outcome.TP, (0, 0): Outcome.TN, (1, 0): Outcome.FP, (0, 1): Outcome.FN}
    for (p, y), o in table.items():
        assert outcome_of(p, y) is o
    assert len(set(table.values())) == 4


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 6), seed=st.integers(0, 2**32 - 1))
def test_random_policy_invariants(n, seed):
    rng = np.random.default_rng(seed)
    sample = SampleRecord("x", int(rng.integers(2)), tuple(rng.random(n)), tuple(rng.random(n) * 5))

    def policy(s, mode, r):
        return int(r.choice(sorted(legal_actions(s))))

    ep = run_episode(policy, sample, "stochastic", rng)
    assert len(ep) <= n + 1
    invoked = ep.invoked
    assert len(invoked) == len(set(invoked))
    prev = initial_state(n)
    for tr in ep.transitions:
        s = tr.state
        assert np.all((s == UNSET) | ((s >= 0) & (s <= 1)))
        assert np.all(s[prev != UNSET] == prev[prev != UNSET])
        set_ = s != UNSET
        np.testing.assert_array_equal(s[set_], np.array(sample.scores)[set_])
        prev = s
    expected = sum(sample.costs[i] for i in invoked)
    assert ep.total_cost == pytest.approx(expected)
    for perm in itertools.islice(itertools.permutations(invoked), 6):
        assert sum(sample.costs[i] for i in perm) == pytest.approx(expected)
