"""Dataset generation, persistence, and prediction-record ingestion.

Random draws use numpy's PCG64 via ``numpy.random.default_rng``, a named,
portable 64-bit generator: a given integer seed reproduces the same dataset
on any platform. Stream splitting is by integer seed arithmetic and is
documented where it happens (see experiments.py for the per-run offsets).
Inputs are drawn in one ``uniform`` call of shape (n, 2), so the draw order
is part of the format.

Dataset CSV format: header ``x,y,target``, one row per sample, every number
printed with 17 significant digits (%.17g), which round-trips float64
exactly. Prediction records are JSON-lines objects
``{"label": int, "confidences": [...]}`` or CSV rows ``label,c0,c1,...``.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import List, Sequence, Union

import numpy as np

from .objectives import ObjectiveFunction, get_objective

__all__ = [
    "HALF_WIDTH",
    "RegressionDataset",
    "PredictionRecord",
    "generate_dataset",
    "save_dataset",
    "load_dataset",
    "ingest_predictions",
    "records_from_arrays",
]

#: Sampling box half-width: inputs are i.i.d. uniform on [-3.5, 3.5]^2.
HALF_WIDTH = 3.5

#: Confidence vectors may be off unit sum by at most this before rejection.
CONFIDENCE_SUM_TOL = 1e-6


@dataclass
class RegressionDataset:
    """Inputs (n, 2), targets (n,), and provenance."""

    inputs: np.ndarray
    targets: np.ndarray
    source_function: str = ""
    seed: int | None = None
    split: str = "train"

    def __post_init__(self):
        if self.inputs.ndim != 2 or self.inputs.shape[1] != 2:
            raise ValueError(f"inputs must have shape (n, 2), got {self.inputs.shape}")
        if self.targets.shape != (self.inputs.shape[0],):
            raise ValueError(
                f"targets shape {self.targets.shape} does not match inputs {self.inputs.shape}"
            )
        if not (np.all(np.isfinite(self.inputs)) and np.all(np.isfinite(self.targets))):
            raise ValueError("dataset contains non-finite values")

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    def dataset_id(self) -> str:
        """Stable identifier used in sharpness reports."""
        if self.source_function and self.seed is not None:
            return f"{self.source_function}/{self.split}/seed={self.seed}/n={self.n}"
        return f"file/n={self.n}"


def generate_dataset(fn: Union[ObjectiveFunction, str], n: int, seed: int,
                     split: str = "train") -> RegressionDataset:
    """n i.i.d. uniform points on the sampling box with exact targets."""
    if isinstance(fn, str):
        fn = get_objective(fn)
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    inputs = rng.uniform(-HALF_WIDTH, HALF_WIDTH, size=(int(n), 2))
    targets = np.asarray(fn.value(inputs[:, 0], inputs[:, 1]), dtype=np.float64)
    return RegressionDataset(inputs, targets, fn.name, int(seed), split)


def save_dataset(dataset: RegressionDataset, path) -> None:
    """Write the documented x,y,target CSV with %.17g formatting."""
    with open(path, "w", newline="") as fh:
        fh.write("x,y,target\n")
        for (x, y), t in zip(dataset.inputs, dataset.targets):
            fh.write(f"{x:.17g},{y:.17g},{t:.17g}\n")


def load_dataset(path) -> RegressionDataset:
    """Read a dataset CSV, rejecting malformed rows with their line number."""
    inputs: List[List[float]] = []
    targets: List[float] = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["x", "y", "target"]:
            raise ValueError(f"{path}: expected header 'x,y,target', got {header}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ValueError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
            try:
                x, y, t = (float(v) for v in row)
            except ValueError:
                raise ValueError(f"{path}:{lineno}: non-numeric value in {row}") from None
            if not all(np.isfinite(v) for v in (x, y, t)):
                raise ValueError(f"{path}:{lineno}: non-finite value in {row}")
            inputs.append([x, y])
            targets.append(t)
    if not inputs:
        raise ValueError(f"{path}: dataset is empty")
    return RegressionDataset(np.array(inputs), np.array(targets), split="file")


# --- prediction records -------------------------------------------------------

@dataclass
class PredictionRecord:
    """One classifier output: true label plus a normalized confidence vector."""

    true_label: int
    confidences: np.ndarray
    predicted_label: int = field(init=False)

    def __post_init__(self):
        conf = np.asarray(self.confidences, dtype=np.float64)
        if conf.ndim != 1 or conf.shape[0] < 1:
            raise ValueError(f"confidences must be a nonempty vector, got shape {conf.shape}")
        if not np.all(np.isfinite(conf)) or np.any(conf < 0) or np.any(conf > 1):
            raise ValueError("confidences must be finite and in [0, 1]")
        total = float(conf.sum())
        if abs(total - 1.0) > CONFIDENCE_SUM_TOL:
            raise ValueError(f"confidences sum to {total}, outside 1 +- {CONFIDENCE_SUM_TOL}")
        if total != 1.0:
            conf = conf / total
        self.confidences = conf
        if not 0 <= int(self.true_label) < conf.shape[0]:
            raise ValueError(
                f"label {self.true_label} out of range for {conf.shape[0]} classes"
            )
        self.true_label = int(self.true_label)
        # Ties break to the lowest class index (np.argmax convention).
        self.predicted_label = int(np.argmax(conf))


def records_from_arrays(labels: Sequence[int], confidences) -> List[PredictionRecord]:
    """Build records from parallel arrays (labels (N,), confidences (N, C))."""
    confidences = np.asarray(confidences, dtype=np.float64)
    if confidences.ndim != 2 or len(labels) != confidences.shape[0]:
        raise ValueError("labels and confidences must be parallel (N,) and (N, C)")
    return [PredictionRecord(int(l), confidences[i]) for i, l in enumerate(labels)]


def _record_or_raise(label, confidences, where: str) -> PredictionRecord:
    try:
        return PredictionRecord(label, np.asarray(confidences, dtype=np.float64))
    except ValueError as exc:
        raise ValueError(f"{where}: {exc}") from None


def ingest_predictions(path) -> List[PredictionRecord]:
    """Load prediction records from JSON-lines (.jsonl/.json) or CSV.

    Every record is validated; confidence vectors off unit sum by at most
    1e-6 are renormalized, anything worse is rejected with its row number.
    """
    path = str(path)
    records: List[PredictionRecord] = []
    if path.endswith((".jsonl", ".json")):
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    obj = json.loads(line)
                    label = obj["label"]
                    conf = obj["confidences"]
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise ValueError(f"{path}:{lineno}: malformed record: {exc}") from None
                records.append(_record_or_raise(label, conf, f"{path}:{lineno}"))
    else:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            for lineno, row in enumerate(reader, start=1):
                if not row:
                    continue
                if lineno == 1 and row[0].strip().lower() == "label":
                    continue  # optional header row
                try:
                    label = int(row[0])
                    conf = [float(v) for v in row[1:]]
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: non-numeric value in {row}") from None
                records.append(_record_or_raise(label, conf, f"{path}:{lineno}"))
    return records
