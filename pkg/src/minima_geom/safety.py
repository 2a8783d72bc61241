"""Calibration, disagreement, and corruption accuracy over prediction records.

ECE uses equal-width binning of top-1 confidence: bin k covers
[k/n_bins, (k+1)/n_bins), the last bin is closed at 1.0, empty bins
contribute zero, and the gaps are combined with L1 weighting
sum_b (|B_b|/N) * |acc(B_b) - conf(B_b)|.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .data import PredictionRecord

__all__ = [
    "EvaluationReport",
    "accuracy",
    "expected_calibration_error",
    "prediction_disagreement",
    "corruption_accuracy",
    "evaluation_report",
]

DEFAULT_BINS = 15


def _require_records(records: Sequence[PredictionRecord], name: str) -> None:
    if len(records) == 0:
        raise ValueError(f"{name} is empty")


def accuracy(records: Sequence[PredictionRecord]) -> float:
    """Fraction of records whose predicted label matches the true label."""
    _require_records(records, "records")
    hits = sum(1 for r in records if r.predicted_label == r.true_label)
    return hits / len(records)


def expected_calibration_error(records: Sequence[PredictionRecord],
                               n_bins: int = DEFAULT_BINS) -> float:
    """L1 expected calibration error over equal-width top-1 confidence bins."""
    _require_records(records, "records")
    if n_bins < 1:
        raise ValueError(f"n_bins must be >= 1, got {n_bins}")
    conf = np.array([r.confidences[r.predicted_label] for r in records])
    correct = np.array([r.predicted_label == r.true_label for r in records], dtype=np.float64)
    # floor(conf * n) puts conf in [k/n, (k+1)/n); clip closes the last bin at 1.
    idx = np.minimum((conf * n_bins).astype(np.int64), n_bins - 1)
    n = len(records)
    ece = 0.0
    for b in range(n_bins):
        mask = idx == b
        count = int(mask.sum())
        if count == 0:
            continue
        gap = abs(correct[mask].mean() - conf[mask].mean())
        ece += (count / n) * gap
    return ece


def prediction_disagreement(records_a: Sequence[PredictionRecord],
                            records_b: Sequence[PredictionRecord]) -> float:
    """Fraction of aligned positions where the top-1 predictions differ."""
    _require_records(records_a, "records_a")
    if len(records_a) != len(records_b):
        raise ValueError(
            f"record lists differ in length: {len(records_a)} vs {len(records_b)}"
        )
    differing = sum(
        1 for a, b in zip(records_a, records_b) if a.predicted_label != b.predicted_label
    )
    return differing / len(records_a)


def corruption_accuracy(
    clean: Sequence[PredictionRecord],
    corrupted: Mapping[Tuple[str, int], Sequence[PredictionRecord]],
) -> float:
    """Unweighted mean accuracy over the (corruption, severity) sets.

    The clean records are the uncorrupted reference set; they are validated
    but do not enter the mean.
    """
    _require_records(clean, "clean")
    if len(corrupted) == 0:
        raise ValueError("corrupted map is empty")
    accs = [accuracy(records) for _, records in sorted(corrupted.items())]
    return float(np.mean(accs))


@dataclass(frozen=True)
class EvaluationReport:
    """Safety metrics over one or more record sets."""

    accuracy: float
    ece: float
    n_bins: int
    corruption_accuracy: Optional[float] = None
    disagreement: Optional[float] = None
    record_counts: Dict[str, int] = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def evaluation_report(
    records: Sequence[PredictionRecord],
    n_bins: int = DEFAULT_BINS,
    records_b: Optional[Sequence[PredictionRecord]] = None,
    corrupted: Optional[Mapping[Tuple[str, int], Sequence[PredictionRecord]]] = None,
) -> EvaluationReport:
    """Bundle the metrics that apply to the given record sets."""
    counts = {"records": len(records)}
    disagreement = None
    if records_b is not None:
        counts["records_b"] = len(records_b)
        disagreement = prediction_disagreement(records, records_b)
    cacc = None
    if corrupted:
        for key, recs in corrupted.items():
            counts[f"corrupted/{key[0]}/{key[1]}"] = len(recs)
        cacc = corruption_accuracy(records, corrupted)
    return EvaluationReport(
        accuracy=accuracy(records),
        ece=expected_calibration_error(records, n_bins),
        n_bins=n_bins,
        corruption_accuracy=cacc,
        disagreement=disagreement,
        record_counts=counts,
    )
