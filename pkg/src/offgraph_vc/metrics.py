"""Ranking and classification metrics over prediction records."""

from __future__ import annotations

import csv
import json
import math
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import date
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np

K_VALUES = (5, 10, 20)


@dataclass
class PredictionRecord:
    target_id: str
    t0: date
    y_true: int
    y_pred: int
    confidence: float
    confidence_source: str = "verdict"
    weights: list[float] = field(default_factory=list)
    verdicts: dict[str, bool] = field(default_factory=dict)
    p_gate: Optional[float] = None

    @property
    def month(self) -> str:
        return f"{self.t0:%Y-%m}"

    def to_json(self) -> dict:
        return {
            "target_id": self.target_id,
            "t0": self.t0.isoformat(),
            "y_true": int(self.y_true),
            "y_pred": int(self.y_pred),
            "confidence": self.confidence,
            "confidence_source": self.confidence_source,
            "weights": list(self.weights),
            "verdicts": dict(self.verdicts),
            "p_gate": self.p_gate,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "PredictionRecord":
        return cls(
            obj["target_id"],
            date.fromisoformat(obj["t0"]),
            int(obj["y_true"]),
            int(obj["y_pred"]),
            float(obj["confidence"]),
            obj.get("confidence_source", "verdict"),
            list(obj.get("weights", [])),
            dict(obj.get("verdicts", {})),
            obj.get("p_gate"),
        )


def write_predictions(path: str | Path, records: Iterable[PredictionRecord]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(r.to_json(), sort_keys=True) + "\n")


def read_predictions(path: str | Path) -> list[PredictionRecord]:
    with Path(path).open(encoding="utf-8") as fh:
        return [PredictionRecord.from_json(json.loads(ln)) for ln in fh if ln.strip()]


def rank(records: Sequence[PredictionRecord]) -> list[PredictionRecord]:
    """Confidence descending, ties by target id."""
    return sorted(records, key=lambda r: (-r.confidence, r.target_id))


def precision_at_k(records: Sequence[PredictionRecord], k: int) -> float:
    """Share of positives among the top ``k``; over all records when fewer than ``k``."""
    if not records:
        raise ValueError("precision_at_k of empty input")
    if k <= 0:
        raise ValueError("k must be positive")
    return float(_precision_fraction(records, k))


def _precision_fraction(records: Sequence[PredictionRecord], k: int) -> Fraction:
    top = rank(records)[:k]
    return Fraction(sum(r.y_true for r in top), len(top))


def by_month(records: Iterable[PredictionRecord]) -> dict[str, list[PredictionRecord]]:
    groups: dict[str, list[PredictionRecord]] = defaultdict(list)
    for r in records:
        groups[r.month].append(r)
    return dict(sorted(groups.items()))


def average_precision_at_k(records: Sequence[PredictionRecord], k: int) -> float:
    """Mean of per-month P@K over months with at least one record."""
    months = by_month(records)
    if not months:
        return float("nan")
    # exact rational mean: independent of month order, 0.4 and 0.2 average to 0.3
    return float(sum((_precision_fraction(rs, k) for rs in months.values()), Fraction(0)) / len(months))


@dataclass
class CohortMetrics:
    month: str
    n: int
    positives: int
    p_at_k: dict[int, float]
    short: dict[int, bool]  # fewer than K records


def cohort_metrics(records: Sequence[PredictionRecord], ks: Sequence[int] = K_VALUES) -> list[CohortMetrics]:
    out = []
    for month, rs in by_month(records).items():
        out.append(
            CohortMetrics(
                month,
                len(rs),
                sum(r.y_true for r in rs),
                {k: precision_at_k(rs, k) for k in ks},
                {k: len(rs) < k for k in ks},
            )
        )
    return out


def auc_roc(y: Sequence[int], scores: Sequence[float]) -> Optional[float]:
    """Mann-Whitney U over average ranks; ties count one half."""
    y = np.asarray(y, dtype=int)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(s, kind="mergesort")
    ranks = np.empty(len(s))
    sorted_s = s[order]
    i = 0
    while i < len(s):
        j = i
        while j + 1 < len(s) and sorted_s[j + 1] == sorted_s[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def auc_pr(y: Sequence[int], scores: Sequence[float]) -> Optional[float]:
    """Average precision: step interpolation over distinct score thresholds."""
    y = np.asarray(y, dtype=int)
    s = np.asarray(scores, dtype=np.float64)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        return None
    ap, tp, seen, prev_recall = 0.0, 0, 0, 0.0
    for thr in np.unique(s)[::-1]:
        mask = s == thr
        tp += int(y[mask].sum())
        seen += int(mask.sum())
        recall = tp / n_pos
        ap += (recall - prev_recall) * (tp / seen)
        prev_recall = recall
    return float(ap)


def classification_metrics(records: Sequence[PredictionRecord]) -> dict[str, Optional[float]]:
    y = np.array([r.y_true for r in records], dtype=int)
    pred = np.array([r.y_pred for r in records], dtype=int)
    conf = np.array([r.confidence for r in records], dtype=np.float64)
    tp = int(np.sum((pred == 1) & (y == 1)))
    fp = int(np.sum((pred == 1) & (y == 0)))
    fn = int(np.sum((pred == 0) & (y == 1)))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "auc_pr": auc_pr(y, conf),
        "auc_roc": auc_roc(y, conf),
    }


def summary_metrics(records: Sequence[PredictionRecord], ks: Sequence[int] = K_VALUES) -> dict[str, Optional[float]]:
    if not records:
        raise ValueError("no prediction records")
    out: dict[str, Optional[float]] = {"n": float(len(records)), "positives": float(sum(r.y_true for r in records))}
    for k in ks:
        out[f"p_at_{k}"] = precision_at_k(records, k)
        out[f"ap_at_{k}"] = average_precision_at_k(records, k)
    out.update(classification_metrics(records))
    return out


def shuffled_labels(records: Sequence[PredictionRecord], seed: int = 0) -> list[PredictionRecord]:
    """Same rankings against permuted labels (chance-level reference)."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(records))
    ys = [records[int(i)].y_true for i in perm]
    return [
        PredictionRecord(r.target_id, r.t0, y, r.y_pred, r.confidence, r.confidence_source, r.weights, r.verdicts, r.p_gate)
        for r, y in zip(records, ys)
    ]


def _fmt(v: Optional[float]) -> str:
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return ""
    return f"{v:.6f}"


def read_metrics_csv(path: str | Path) -> dict[str, Optional[float]]:
    out: dict[str, Optional[float]] = {}
    with Path(path).open(newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out[row["metric"]] = float(row["value"]) if row["value"] else None
    return out


def report(
    records: Sequence[PredictionRecord],
    out_dir: str | Path,
    baselines: Optional[Mapping[str, Mapping[str, Optional[float]]]] = None,
    ks: Sequence[int] = K_VALUES,
) -> dict[str, Optional[float]]:
    """Write ``metrics.csv`` and ``monthly.csv``; append baseline and delta columns."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    metrics = summary_metrics(records, ks)
    baselines = dict(sorted((baselines or {}).items()))
    with (out / "metrics.csv").open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        header = ["metric", "value"]
        for name in baselines:
            header += [name, f"delta_{name}"]
        wr.writerow(header)
        for key, val in metrics.items():
            row = [key, _fmt(val)]
            for base in baselines.values():
                b = base.get(key)
                row += [_fmt(b), _fmt(val - b) if val is not None and b is not None else ""]
            wr.writerow(row)
    with (out / "monthly.csv").open("w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["month", "n", "positives"] + [f"p_at_{k}" for k in ks] + [f"short_{k}" for k in ks])
        for c in cohort_metrics(records, ks):
            wr.writerow(
                [c.month, c.n, c.positives]
                + [_fmt(c.p_at_k[k]) for k in ks]
                + [int(c.short[k]) for k in ks]
            )
    return metrics
