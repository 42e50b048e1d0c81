"""Static detector-subset ensembles aggregated by mean ("majority") or max ("or")."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scores import SampleRecord, ScoreTable

RULES = ("majority", "or")
THRESHOLD = 0.5
MAX_DETECTORS = 20


@dataclass(frozen=True)
class StaticEnsemble:
    subset: tuple[int, ...]
    rule: str

    def __post_init__(self):
        subset = tuple(sorted(set(int(i) for i in self.subset)))
        if not subset:
            raise ValueError("ensemble subset must be non-empty")
        if subset[0] < 0:
            raise ValueError("detector indices must be >= 0")
        if self.rule not in RULES:
            raise ValueError(f"unknown aggregation rule {self.rule!r}")
        object.__setattr__(self, "subset", subset)

    def name(self, detector_ids: list[str] | None = None) -> str:
        if detector_ids is None:
            return "+".join(str(i) for i in self.subset)
        return "+".join(detector_ids[i] for i in self.subset)


def classify(confidence):
    """Threshold 0.5 with ties going to benign."""
    return (np.asarray(confidence) > THRESHOLD).astype(np.int64)


def aggregate(ensemble: StaticEnsemble, sample: SampleRecord) -> tuple[float, float]:
    if ensemble.subset[-1] >= sample.n:
        raise ValueError(f"ensemble uses detector {ensemble.subset[-1]} but pool has {sample.n}")
    scores = np.asarray(sample.scores, dtype=float)[list(ensemble.subset)]
    costs = np.asarray(sample.costs, dtype=float)[list(ensemble.subset)]
    conf = scores.mean() if ensemble.rule == "majority" else scores.max()
    return float(conf), float(costs.sum())


def aggregate_table(ensemble: StaticEnsemble, scores: np.ndarray,
                    costs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized :func:`aggregate` over a score matrix; returns (confidence, cost)."""
    cols = list(ensemble.subset)
    s = np.atleast_2d(scores)[:, cols]
    conf = s.mean(axis=1) if ensemble.rule == "majority" else s.max(axis=1)
    return conf, np.atleast_2d(costs)[:, cols].sum(axis=1)


def enumerate_baselines(n: int) -> list[StaticEnsemble]:
    """Both rules over every non-empty subset, bitmask ascending, majority first."""
    if n < 1:
        raise ValueError("need n >= 1")
    if n > MAX_DETECTORS:
        raise ValueError(f"refusing to enumerate 2^{n} subsets (limit n <= {MAX_DETECTORS})")
    out = []
    for mask in range(1, 1 << n):
        subset = tuple(i for i in range(n) if mask >> i & 1)
        out.extend(StaticEnsemble(subset, rule) for rule in RULES)
    return out


def predict_table(ensemble: StaticEnsemble, table: ScoreTable):
    conf, cost = aggregate_table(ensemble, table.scores, table.costs)
    return conf, classify(conf), cost
