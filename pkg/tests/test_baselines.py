import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cascadeforge.baselines import StaticEnsemble, aggregate, aggregate_table, classify, enumerate_baselines
from cascadeforge.scores import SampleRecord


def test_rule_examples():
    s = SampleRecord("x", 1, (0.2, 0.8), (1.0, 2.0))
    conf, cost = aggregate(StaticEnsemble((0, 1), "majority"), s)
    assert conf == 0.5 and classify(conf) == 0 and cost == 3.0
    conf, _ = aggregate(StaticEnsemble((0, 1), "or"), s)
    assert conf == 0.8 and classify(conf) == 1
    for rule in ("majority", "or"):
        assert aggregate(StaticEnsemble((1,), rule), s) == (0.8, 2.0)


def test_enumeration_counts():
    assert len(enumerate_baselines(1)) == 2
    assert len(enumerate_baselines(2)) == 6
    assert len(enumerate_baselines(4)) == 30
    assert len(enumerate_baselines(5)) == 62
    assert len(set(enumerate_baselines(5))) == 62
    with pytest.raises(ValueError):
        enumerate_baselines(21)


def test_ensemble_validation():
    with pytest.raises(ValueError):
        StaticEnsemble((), "or")
    with pytest.raises(ValueError):
        StaticEnsemble((0,), "vote")
    assert StaticEnsemble((2, 0, 2), "or").subset == (0, 2)
    assert StaticEnsemble((0, 2), "or").name(["A", "B", "C"]) == "A+C"
    with pytest.raises(ValueError):
        aggregate(StaticEnsemble((3,), "or"), SampleRecord("x", 0, (0.1,), (1.0,)))


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 6))
def test_rule_properties(seed, n):
    rng = np.random.default_rng(seed)
    scores, costs = rng.random((5, n)), rng.random((5, n)) * 3
    mask = rng.random(n) < 0.5
    mask[rng.integers(n)] = True
    subset = tuple(np.flatnonzero(mask))
    c_or, k_or = aggregate_table(StaticEnsemble(subset, "or"), scores, costs)
    c_mj, k_mj = aggregate_table(StaticEnsemble(subset, "majority"), scores, costs)
    assert np.all(c_or >= c_mj - 1e-15)
    np.testing.assert_allclose(k_or, costs[:, list(subset)].sum(axis=1))
    np.testing.assert_array_equal(k_or, k_mj)
    extra = int(rng.integers(n))
    bigger, _ = aggregate_table(StaticEnsemble(subset + (extra,), "or"), scores, costs)
    assert np.all(bigger >= c_or)
