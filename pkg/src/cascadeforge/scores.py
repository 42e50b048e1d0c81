"""Detector score tables: loading, writing, splitting and synthesis.

A score table holds, for every sample, its ground-truth label and the
precomputed confidence score and runtime cost of every detector in the pool.
Orchestration never runs a detector; it only looks values up here.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np

BENIGN = 0
PHISHING = 1


class ScoreTableError(ValueError):
    """Raised for malformed or inconsistent score tables."""


@dataclass(frozen=True)
class DetectorProfile:
    id: str
    display_name: str = ""
    mean_cost: float = float("nan")


@dataclass(frozen=True)
class SampleRecord:
    sample_id: str
    label: int
    scores: tuple[float, ...]
    costs: tuple[float, ...]

    def __post_init__(self):
        if self.label not in (BENIGN, PHISHING):
            raise ScoreTableError(f"label must be 0 or 1, got {self.label!r}")
        if len(self.scores) != len(self.costs):
            raise ScoreTableError("scores and costs differ in length")
        for s in self.scores:
            if not (0.0 <= s <= 1.0):
                raise ScoreTableError(f"score out of range: {s}")
        for c in self.costs:
            if not (math.isfinite(c) and c >= 0.0):
                raise ScoreTableError(f"cost must be finite and >= 0: {c}")

    @property
    def n(self) -> int:
        return len(self.scores)


@dataclass
class ScoreTable:
    """Column-oriented score table.

    ``scores`` and ``costs`` are ``(n_samples, n_detectors)`` float arrays;
    ``labels`` is an int array. Treat instances as read-only.
    """

    pool: list[DetectorProfile]
    sample_ids: list[str]
    labels: np.ndarray
    scores: np.ndarray
    costs: np.ndarray
    split_seed: int | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.scores = np.asarray(self.scores, dtype=np.float64).reshape(len(self.labels), -1)
        self.costs = np.asarray(self.costs, dtype=np.float64).reshape(len(self.labels), -1)
        n = len(self.pool)
        if n < 1:
            raise ScoreTableError("detector pool is empty")
        ids = [d.id for d in self.pool]
        if len(set(ids)) != len(ids):
            raise ScoreTableError(f"duplicate detector ids: {ids}")
        if self.scores.shape[1] != n or self.costs.shape[1] != n:
            raise ScoreTableError("score/cost columns do not match the pool size")
        if len(self.sample_ids) != len(self.labels):
            raise ScoreTableError("sample_ids and labels differ in length")
        if len(set(self.sample_ids)) != len(self.sample_ids):
            raise ScoreTableError("duplicate sample_id")
        if not np.isin(self.labels, (BENIGN, PHISHING)).all():
            raise ScoreTableError("labels must be 0 or 1")
        if ((self.scores < 0) | (self.scores > 1) | ~np.isfinite(self.scores)).any():
            raise ScoreTableError("score out of range [0, 1]")
        if ((self.costs < 0) | ~np.isfinite(self.costs)).any():
            raise ScoreTableError("cost must be finite and >= 0")

    @classmethod
    def from_records(cls, pool: Sequence[DetectorProfile], records: Iterable[SampleRecord],
                     split_seed: int | None = None) -> "ScoreTable":
        records = list(records)
        n = len(pool)
        return cls(
            pool=list(pool),
            sample_ids=[r.sample_id for r in records],
            labels=np.array([r.label for r in records], dtype=np.int64),
            scores=np.array([r.scores for r in records], dtype=np.float64).reshape(len(records), n),
            costs=np.array([r.costs for r in records], dtype=np.float64).reshape(len(records), n),
            split_seed=split_seed,
        )

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def n_detectors(self) -> int:
        return len(self.pool)

    @property
    def detector_ids(self) -> list[str]:
        return [d.id for d in self.pool]

    def record(self, i: int) -> SampleRecord:
        return SampleRecord(
            sample_id=self.sample_ids[i],
            label=int(self.labels[i]),
            scores=tuple(float(x) for x in self.scores[i]),
            costs=tuple(float(x) for x in self.costs[i]),
        )

    @property
    def samples(self) -> list[SampleRecord]:
        return [self.record(i) for i in range(len(self))]

    def subset(self, indices: Sequence[int] | np.ndarray) -> "ScoreTable":
        idx = np.asarray(indices, dtype=np.int64)
        return ScoreTable(
            pool=list(self.pool),
            sample_ids=[self.sample_ids[i] for i in idx],
            labels=self.labels[idx],
            scores=self.scores[idx],
            costs=self.costs[idx],
            split_seed=self.split_seed,
        )


# ---------------------------------------------------------------------------
# File format

def _header_pool(header: list[str]) -> list[DetectorProfile]:
    if len(header) < 4 or header[0] != "sample_id" or header[1] != "label":
        raise ScoreTableError("header must start with sample_id,label followed by score_/cost_ pairs")
    rest = header[2:]
    if len(rest) % 2:
        raise ScoreTableError("header has an unpaired score/cost column")
    pool = []
    for s_col, c_col in zip(rest[::2], rest[1::2]):
        if not s_col.startswith("score_") or not c_col.startswith("cost_"):
            raise ScoreTableError(f"expected score_<id>,cost_<id>, got {s_col},{c_col}")
        det = s_col[len("score_"):]
        if c_col[len("cost_"):] != det or not det:
            raise ScoreTableError(f"mismatched detector columns {s_col},{c_col}")
        pool.append(DetectorProfile(id=det, display_name=det))
    return pool


def load_table(path: str | Path, format: str = "csv") -> ScoreTable:
    """Read a score table. Row numbers in errors count data rows from 1."""
    if format != "csv":
        raise ScoreTableError(f"unsupported table format {format!r}")
    path = Path(path)
    if not path.exists():
        raise ScoreTableError(f"no such file: {path}")
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ScoreTableError("empty file (no header)") from None
        pool = _header_pool(header)
        n = len(pool)
        ids, labels, scores, costs = [], [], [], []
        seen = set()
        for k, row in enumerate(reader, start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2 + 2 * n:
                raise ScoreTableError(f"malformed row {k}: expected {2 + 2 * n} fields, got {len(row)}")
            sid = row[0].strip()
            if sid in seen:
                raise ScoreTableError(f"duplicate sample_id {sid!r} at row {k}")
            seen.add(sid)
            try:
                label = int(row[1])
                vals = [float(x) for x in row[2:]]
            except ValueError:
                raise ScoreTableError(f"malformed row {k}: non-numeric field") from None
            if label not in (BENIGN, PHISHING):
                raise ScoreTableError(f"label must be 0 or 1 at row {k}")
            s, c = vals[::2], vals[1::2]
            if any(not (0.0 <= x <= 1.0) for x in s):
                raise ScoreTableError(f"score out of range at row {k}")
            if any(not (math.isfinite(x) and x >= 0.0) for x in c):
                raise ScoreTableError(f"negative or non-finite cost at row {k}")
            ids.append(sid)
            labels.append(label)
            scores.append(s)
            costs.append(c)
    if not ids:
        raise ScoreTableError("no samples")
    costs_arr = np.array(costs, dtype=np.float64)
    pool = [DetectorProfile(d.id, d.display_name, float(costs_arr[:, j].mean()))
            for j, d in enumerate(pool)]
    return ScoreTable(pool, ids, np.array(labels), np.array(scores), costs_arr)


def _fmt(x: float) -> str:
    return np.format_float_positional(float(x), unique=True, trim="-")


def table_to_csv(table: ScoreTable) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["sample_id", "label"]
    for d in table.pool:
        header += [f"score_{d.id}", f"cost_{d.id}"]
    writer.writerow(header)
    for i, sid in enumerate(table.sample_ids):
        row = [sid, str(int(table.labels[i]))]
        for j in range(table.n_detectors):
            row += [_fmt(table.scores[i, j]), _fmt(table.costs[i, j])]
        writer.writerow(row)
    return buf.getvalue()


def write_table(table: ScoreTable, path: str | Path) -> None:
    Path(path).write_text(table_to_csv(table), encoding="utf-8")


# ---------------------------------------------------------------------------
# Splitting

def _largest_remainder(total: int, fractions: Sequence[float]) -> list[int]:
    raw = [total * f for f in fractions]
    counts = [math.floor(x + 1e-9) for x in raw]
    short = total - sum(counts)
    order = sorted(range(len(raw)), key=lambda i: (-(raw[i] - counts[i]), i))
    for i in order[:short]:
        counts[i] += 1
    return counts


def split(table: ScoreTable, fractions: Sequence[float] = (0.75, 0.10, 0.15),
          seed: int = 0) -> tuple[ScoreTable, ...]:
    """Stratified, seeded partition into ``len(fractions)`` disjoint tables.

    Partition sizes follow the largest-remainder rounding of the overall
    fractions. Samples of each class are shuffled, spread evenly over a
    merged ordering and cut into contiguous chunks, so every chunk holds each
    class within one sample of its proportional share.
    """
    if any(f <= 0 for f in fractions):
        raise ScoreTableError("split fractions must be positive")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ScoreTableError(f"split fractions must sum to 1, got {sum(fractions)}")
    rng = np.random.default_rng(seed)
    keys = np.empty(len(table))
    for cls in (BENIGN, PHISHING):
        idx = np.flatnonzero(table.labels == cls)
        perm = rng.permutation(idx)
        keys[perm] = (np.arange(len(perm)) + 0.5) / max(len(perm), 1)
    # ties between classes fall back to label then position, both deterministic
    order = np.lexsort((np.arange(len(table)), table.labels, keys))
    sizes = _largest_remainder(len(table), fractions)
    parts = []
    start = 0
    for p, size in enumerate(sizes):
        idx = order[start:start + size]
        start += size
        labels = table.labels[idx]
        if (labels == BENIGN).sum() == 0 or (labels == PHISHING).sum() == 0:
            raise ScoreTableError(f"partition {p} receives zero samples of one class")
        part = table.subset(np.sort(idx))
        part.split_seed = seed
        parts.append(part)
    return tuple(parts)


# ---------------------------------------------------------------------------
# Synthesis

@dataclass(frozen=True)
class ConstantCost:
    value: float

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return np.full(size, float(self.value))


@dataclass(frozen=True)
class LogNormalCost:
    mu: float
    sigma: float

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.lognormal(self.mu, self.sigma, size)


@dataclass(frozen=True)
class DetectorSpec:
    accuracy: float
    cost_law: ConstantCost | LogNormalCost
    noise: float = 0.0
    id: str | None = None


@dataclass(frozen=True)
class SynthSpec:
    detectors: tuple[DetectorSpec, ...]
    n_samples: int
    class_balance: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if len(self.detectors) < 1:
            raise ScoreTableError("need at least one detector")
        if self.n_samples < 1:
            raise ScoreTableError("n_samples must be >= 1")
        if not 0.0 < self.class_balance < 1.0:
            raise ScoreTableError("class_balance must lie in (0, 1)")
        for d in self.detectors:
            if not 0.5 <= d.accuracy <= 1.0:
                raise ScoreTableError(f"accuracy must lie in [0.5, 1], got {d.accuracy}")
            if d.noise < 0:
                raise ScoreTableError("noise must be >= 0")
            law = d.cost_law
            if isinstance(law, ConstantCost) and not law.value >= 0:
                raise ScoreTableError("constant cost must be >= 0")
            if isinstance(law, LogNormalCost) and not law.sigma >= 0:
                raise ScoreTableError("lognormal sigma must be >= 0")

    @property
    def n_detectors(self) -> int:
        return len(self.detectors)


def error_std(accuracy: float) -> float:
    """Gaussian error std whose 0.5-threshold accuracy equals ``accuracy``.

    A score ``label + e`` lands on the correct side of 0.5 iff ``|e| < 0.5``
    on the relevant side, i.e. with probability ``Phi(0.5 / std)``.
    """
    if accuracy >= 1.0:
        return 0.0
    if accuracy <= 0.5:
        return math.inf
    return 0.5 / NormalDist().inv_cdf(accuracy)


def synthesize(spec: SynthSpec) -> ScoreTable:
    """Draw a seeded synthetic score table.

    Each detector's score is ``clamp(label + e, 0, 1)`` with ``e`` Gaussian
    and its std calibrated from the detector's accuracy. ``noise`` adds a
    half-normal jitter that pulls scores toward 0.5 without crossing it, so it
    blurs confidence but leaves the thresholded decision unchanged.
    """
    rng = np.random.default_rng(spec.seed)
    m = spec.n_samples
    labels = (rng.random(m) < spec.class_balance).astype(np.int64)
    n = spec.n_detectors
    scores = np.empty((m, n))
    costs = np.empty((m, n))
    above_half = np.nextafter(0.5, 1.0)
    for j, det in enumerate(spec.detectors):
        sd = error_std(det.accuracy)
        err = rng.normal(0.0, 1.0, m) * sd if sd > 0 else np.zeros(m)
        raw = np.clip(labels + err, 0.0, 1.0)
        jitter = np.abs(rng.normal(0.0, 1.0, m)) * det.noise
        scores[:, j] = np.where(raw > 0.5,
                                np.maximum(raw - jitter, above_half),
                                np.minimum(raw + jitter, 0.5))
        costs[:, j] = det.cost_law.draw(rng, m)
    pool = []
    for j, det in enumerate(spec.detectors):
        did = det.id or f"d{j}"
        pool.append(DetectorProfile(did, did, float(costs[:, j].mean())))
    width = len(str(m - 1))
    ids = [f"s{i:0{width}d}" for i in range(m)]
    return ScoreTable(pool, ids, labels, scores, costs, split_seed=None)
