"""Classification metrics, Pareto extraction, detector complementarity and reports."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .baselines import StaticEnsemble, enumerate_baselines, predict_table
from .scores import PHISHING, ScoreTable


@dataclass(frozen=True)
class MetricsReport:
    """Undefined ratios are ``None`` rather than 0."""

    auc: float | None
    f1: float | None
    precision: float | None
    recall: float | None
    accuracy: float
    mean_time: float
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


def _ratio(num: int, den: int) -> float | None:
    return num / den if den else None


def auc_numerator(confidence: np.ndarray, labels: np.ndarray) -> tuple[int, int]:
    """ROC area as the integer pair ``(num, 2*P*N)``.

    Trapezoids are summed over distinct thresholds in descending order; with
    integer counts each trapezoid is ``dFP * (TP_prev + TP_cur)`` halves of a
    unit cell, so no rounding happens before the final division.
    """
    confidence = np.asarray(confidence, dtype=float)
    labels = np.asarray(labels)
    pos = int((labels == PHISHING).sum())
    neg = len(labels) - pos
    order = np.argsort(-confidence, kind="mergesort")
    c, y = confidence[order], labels[order] == PHISHING
    num = 0
    tp = fp = 0
    i = 0
    while i < len(c):
        j = i
        while j < len(c) and c[j] == c[i]:
            j += 1
        dtp = int(y[i:j].sum())
        dfp = (j - i) - dtp
        num += dfp * (2 * tp + dtp)
        tp += dtp
        fp += dfp
        i = j
    return num, 2 * pos * neg


def roc_auc(confidence, labels) -> float | None:
    num, den = auc_numerator(confidence, labels)
    return num / den if den else None


def compute_metrics(confidence, predicted, cost, labels) -> MetricsReport:
    confidence = np.asarray(confidence, dtype=float)
    predicted = np.asarray(predicted)
    cost = np.asarray(cost, dtype=float)
    labels = np.asarray(labels)
    if len(labels) == 0:
        raise ValueError("no samples to evaluate")
    if not len(confidence) == len(predicted) == len(cost) == len(labels):
        raise ValueError("confidence, predicted, cost and labels differ in length")
    pp, yp = predicted == PHISHING, labels == PHISHING
    tp, fp = int((pp & yp).sum()), int((pp & ~yp).sum())
    fn, tn = int((~pp & yp).sum()), int((~pp & ~yp).sum())
    return MetricsReport(
        auc=roc_auc(confidence, labels),
        f1=_ratio(2 * tp, 2 * tp + fp + fn),
        precision=_ratio(tp, tp + fp),
        recall=_ratio(tp, tp + fn),
        accuracy=(tp + tn) / len(labels),
        mean_time=float(cost.mean()),
        tp=tp, tn=tn, fp=fp, fn=fn,
    )


# ---------------------------------------------------------------------------
# Pareto

@dataclass(frozen=True)
class ParetoPoint:
    name: str
    quality: float
    mean_time: float

    def __post_init__(self):
        if not (math.isfinite(self.quality) and math.isfinite(self.mean_time)):
            raise ValueError(f"non-finite Pareto point {self}")


def dominates(a: ParetoPoint, b: ParetoPoint) -> bool:
    """Higher quality and lower time are better."""
    return (a.quality >= b.quality and a.mean_time <= b.mean_time
            and (a.quality > b.quality or a.mean_time < b.mean_time))


def pareto_front(points: Sequence[ParetoPoint]) -> list[ParetoPoint]:
    if not points:
        raise ValueError("no points")
    return [p for p in points if not any(dominates(q, p) for q in points)]


# ---------------------------------------------------------------------------
# Detector analysis

def complementarity_matrix(table: ScoreTable) -> np.ndarray:
    """Entry (i, j): share of detector i's mistakes that detector j gets right.

    The diagonal and the rows of detectors that make no mistakes are NaN.
    """
    if table.n_detectors < 2:
        raise ValueError("need at least two detectors")
    correct = (table.scores > 0.5).astype(np.int64) == table.labels[:, None]
    n = table.n_detectors
    out = np.full((n, n), np.nan)
    for i in range(n):
        wrong = ~correct[:, i]
        if not wrong.any():
            continue
        for j in range(n):
            if j != i:
                out[i, j] = correct[wrong, j].mean()
    return out


def agent_confidence(terminal_probs: np.ndarray, n: int):
    """Phishing probability renormalized over the two classify actions."""
    p = np.asarray(terminal_probs, dtype=float)
    pb, pp = p[..., n], p[..., n + 1]
    return pp / (pb + pp)


# ---------------------------------------------------------------------------
# Reports

COLUMNS = ("Combination", "Aggregation", "AUC", "F1", "Time", "Precision", "Recall", "Accuracy")


@dataclass
class ReportRow:
    combination: str
    aggregation: str
    metrics: MetricsReport

    def as_dict(self) -> dict:
        return {"combination": self.combination, "aggregation": self.aggregation, **asdict(self.metrics)}


def baseline_rows(table: ScoreTable, ensembles: Sequence[StaticEnsemble] | None = None) -> list[ReportRow]:
    if ensembles is None:
        ensembles = enumerate_baselines(table.n_detectors)
    ids = table.detector_ids
    rows = []
    for ens in ensembles:
        conf, pred, cost = predict_table(ens, table)
        rows.append(ReportRow(ens.name(ids), ens.rule, compute_metrics(conf, pred, cost, table.labels)))
    return rows


def pareto_points(rows: Sequence[ReportRow], quality: str = "f1") -> list[ParetoPoint]:
    pts = []
    for r in rows:
        q = getattr(r.metrics, quality)
        if q is not None:
            pts.append(ParetoPoint(f"{r.combination} [{r.aggregation}]", q, r.metrics.mean_time))
    return pts


def _cell(x) -> str:
    if x is None:
        return "-"
    if isinstance(x, float):
        return f"{x:.4f}"
    return str(x)


def format_table(rows: Sequence[ReportRow]) -> str:
    body = [[r.combination, r.aggregation, _cell(r.metrics.auc), _cell(r.metrics.f1),
             _cell(r.metrics.mean_time), _cell(r.metrics.precision), _cell(r.metrics.recall),
             _cell(r.metrics.accuracy)] for r in rows]
    widths = [max(len(h), *(len(b[k]) for b in body)) if body else len(h) for k, h in enumerate(COLUMNS)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(COLUMNS, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for b in body:
        lines.append("  ".join(c.ljust(w) for c, w in zip(b, widths)).rstrip())
    return "\n".join(lines) + "\n"


def write_report(rows: Sequence[ReportRow], out_dir: str | Path, stem: str = "report",
                 extra: dict | None = None) -> tuple[Path, Path]:
    """Write ``<stem>.json`` and ``<stem>.txt``; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    front = pareto_front(pareto_points(rows)) if pareto_points(rows) else []
    doc = {"rows": [r.as_dict() for r in rows],
           "pareto_front": [asdict(p) for p in front]}
    if extra:
        doc.update(extra)
    jpath, tpath = out / f"{stem}.json", out / f"{stem}.txt"
    jpath.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    text = format_table(rows)
    if front:
        text += "\nPareto front (F1 vs mean time):\n"
        text += "".join(f"  {p.name}: F1 {p.quality:.4f}, time {p.mean_time:.4f}\n" for p in front)
    tpath.write_text(text)
    return jpath, tpath
