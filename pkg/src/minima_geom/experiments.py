"""Study orchestration: epoch-logged runs, target-loss runs, matched-seed
controls, and mean/SEM aggregation with CSV emission.

Every random stream in a study derives from a single ``base_seed`` through
fixed offsets, so the whole study is reproducible from one integer and no
two streams collide for any realistic run count:

    train dataset, run i   base_seed + i
    test dataset,  run i   base_seed + 100003 + i
    shared init            base_seed + 200003          (epoch/target studies)
    per-seed init, run i   base_seed + 200003 + i      (matched controls)
    sharpness draws, run i base_seed + 300007 + i      (same across controls)

Epoch counting: "epoch e" means the state after e full-batch optimizer
steps, so epoch 0 is the untouched initialization.

Failure policy: a run whose loss goes non-finite is retired from its batch
and recorded with status "failed" at every measurement cell it can no
longer serve (remaining log epochs, remaining targets, or its control
cell). Failed and unreachable rows carry no metric values; aggregation
counts them in ``n_excluded`` instead of mixing them into means.
"""
from __future__ import annotations

import csv
import dataclasses
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .data import RegressionDataset, generate_dataset
from .mlp import (LOSS_KINDS, TOY_WIDTHS, MLPParams, _loss_of_kind,
                  forward_with_cache, kaiming_init)
from .objectives import get_objective
from .optim import OptimizerSpec
from .sharpness import DEFAULT_K, DEFAULT_RHO, SharpnessReport, sharpness_report
from .training import RunBatch

__all__ = [
    "CONTROLS",
    "CONTROL_RHO",
    "CONTROL_WEIGHT_DECAY",
    "LOG_EPOCHS",
    "TARGET_LOSSES",
    "EPOCH_LOGGED",
    "TARGET_LOSS",
    "MATCHED_CONTROLS",
    "RUNS_CSV_COLUMNS",
    "AGGREGATE_CSV_COLUMNS",
    "StudyConfig",
    "RunRecord",
    "AggregateRow",
    "control_spec",
    "run_epoch_logged_study",
    "run_target_loss_study",
    "run_matched_controls",
    "aggregate",
    "write_runs_csv",
    "write_aggregate_csv",
]

CONTROLS = ("baseline", "sam", "weight_decay", "sam_weight_decay")
CONTROL_RHO = 0.05
CONTROL_WEIGHT_DECAY = 5e-4

LOG_EPOCHS = (0, 1, 10, 100, 1_000, 10_000, 100_000, 1_000_000)
TARGET_LOSSES = (300.0, 150.0, 100.0, 10.0, 1.0)

TEST_SEED_OFFSET = 100_003
INIT_SEED_OFFSET = 200_003
SHARPNESS_SEED_OFFSET = 300_007

# converged: best train loss has not improved by more than this over the
# trailing window of epochs
CONVERGENCE_TOL = 1e-8
CONVERGENCE_WINDOW = 1_000

EPOCH_LOGGED = "epoch_logged"
TARGET_LOSS = "target_loss"
MATCHED_CONTROLS = "matched_controls"

STATUS_OK = "ok"
STATUS_FAILED = "failed"
STATUS_UNREACHABLE = "unreachable"


@dataclass
class StudyConfig:
    """Everything a study needs, reproducible from base_seed alone."""

    objective: str
    n_runs: int = 10
    n_samples: int = 10_000
    n_test: int = 10_000
    epochs_budget: int = 1_000_000
    log_epochs: Tuple[int, ...] = LOG_EPOCHS
    target_losses: Tuple[float, ...] = TARGET_LOSSES
    optimizer: OptimizerSpec = field(default_factory=OptimizerSpec)
    controls: Tuple[str, ...] = CONTROLS
    base_seed: int = 0
    rho: float = DEFAULT_RHO
    k_perturb: int = DEFAULT_K
    loss: str = "mse"
    dtype: str = "float32"

    def validate(self) -> "StudyConfig":
        get_objective(self.objective)
        if self.n_runs < 1:
            raise ValueError(f"n_runs must be >= 1, got {self.n_runs}")
        if self.n_samples < 1 or self.n_test < 1:
            raise ValueError("n_samples and n_test must be >= 1")
        if self.epochs_budget < 0:
            raise ValueError("epochs_budget must be >= 0")
        eps = tuple(self.log_epochs)
        if any(e < 0 for e in eps) or list(eps) != sorted(set(eps)):
            raise ValueError("log_epochs must be non-negative and strictly ascending")
        tgs = tuple(self.target_losses)
        if any(not t > 0 for t in tgs) or list(tgs) != sorted(set(tgs), reverse=True):
            raise ValueError("target_losses must be positive and strictly descending")
        for c in self.controls:
            if _normalize_control(c) not in CONTROLS:
                raise ValueError(f"unknown control {c!r}; known: {CONTROLS}")
        if self.loss not in LOSS_KINDS:
            raise ValueError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")
        if not self.rho > 0:
            raise ValueError("rho must be > 0")
        if self.k_perturb < 1:
            raise ValueError("k_perturb must be >= 1")
        self.optimizer.validate()
        return self

    def scaled(self, scale: float) -> "StudyConfig":
        """Shrink sample counts and the epoch budget by ``scale``.

        The log-epoch grid keeps every entry inside the new budget and
        always includes the final epoch.
        """
        if not scale > 0:
            raise ValueError(f"scale must be > 0, got {scale}")
        if scale == 1.0:
            return dataclasses.replace(self)
        budget = max(1, int(round(self.epochs_budget * scale)))
        log_eps = sorted({e for e in self.log_epochs if e <= budget} | {budget})
        return dataclasses.replace(
            self,
            n_samples=max(1, int(round(self.n_samples * scale))),
            n_test=max(1, int(round(self.n_test * scale))),
            epochs_budget=budget,
            log_epochs=tuple(log_eps),
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["log_epochs"] = list(self.log_epochs)
        d["target_losses"] = list(self.target_losses)
        d["controls"] = list(self.controls)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StudyConfig":
        d = dict(d)
        opt = d.pop("optimizer", None)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown study config fields: {sorted(unknown)}")
        if "log_epochs" in d:
            d["log_epochs"] = tuple(sorted({int(e) for e in d["log_epochs"]}))
        if "target_losses" in d:
            d["target_losses"] = tuple(
                sorted({float(t) for t in d["target_losses"]}, reverse=True))
        if "controls" in d:
            d["controls"] = tuple(_normalize_control(c) for c in d["controls"])
        cfg = cls(**d)
        if opt is not None:
            if isinstance(opt, OptimizerSpec):
                cfg.optimizer = opt
            else:
                bad = set(opt) - {f.name for f in dataclasses.fields(OptimizerSpec)}
                if bad:
                    raise ValueError(f"unknown optimizer fields: {sorted(bad)}")
                cfg.optimizer = OptimizerSpec(**opt)
        return cfg


@dataclass(frozen=True)
class RunRecord:
    """One measurement cell of one run."""

    study: str
    objective: str
    control: str
    run_index: int
    epoch: Optional[int]
    target_loss: Optional[float]
    train_loss: Optional[float]
    test_loss: Optional[float]
    generalisation_gap: Optional[float]
    sharpness: Optional[SharpnessReport]
    seed: int
    status: str = STATUS_OK

    def __post_init__(self):
        if self.generalisation_gap is not None and self.generalisation_gap < 0:
            raise ValueError("generalisation_gap must be >= 0")

    def metric(self, name: str) -> Optional[float]:
        if name in ("train_loss", "test_loss", "generalisation_gap"):
            return getattr(self, name)
        if self.sharpness is None:
            return None
        return getattr(self.sharpness, name)


@dataclass(frozen=True)
class AggregateRow:
    """Mean and SEM of one metric over the runs of one study cell."""

    study: str
    objective: str
    control: str
    epoch: Optional[int]
    target_loss: Optional[float]
    metric: str
    mean: Optional[float]
    sem: Optional[float]
    n: int
    n_excluded: int


def _normalize_control(name: str) -> str:
    return name.strip().lower().replace("+", "_").replace("-", "_")


def control_spec(base: OptimizerSpec, control: str,
                 rho: float = CONTROL_RHO,
                 weight_decay: float = CONTROL_WEIGHT_DECAY) -> OptimizerSpec:
    """Optimizer spec for one control arm, derived from the base optimizer."""
    control = _normalize_control(control)
    if control not in CONTROLS:
        raise ValueError(f"unknown control {control!r}; known: {CONTROLS}")
    use_sam = control in ("sam", "sam_weight_decay")
    use_wd = control in ("weight_decay", "sam_weight_decay")
    return dataclasses.replace(
        base,
        sam_rho=rho if use_sam else None,
        weight_decay=weight_decay if use_wd else 0.0,
    )


def _dataset_loss(params: MLPParams, dataset: RegressionDataset, loss: str) -> float:
    pred, _ = forward_with_cache(params.flat, params.widths, dataset.inputs)
    value, _ = _loss_of_kind(loss)(pred, dataset.targets)
    return float(value)


def _chunk_indices(n: int, jobs: int) -> List[np.ndarray]:
    jobs = max(1, min(int(jobs), n))
    return [idx for idx in np.array_split(np.arange(n), jobs) if idx.size]


def _run_chunks(worker, chunks, jobs: int) -> List[RunRecord]:
    if jobs <= 1 or len(chunks) <= 1:
        results = [worker(c) for c in chunks]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(worker, chunks))
    return [rec for part in results for rec in part]


class _StudyRuns:
    """Shared per-run setup for one chunk of runs: datasets, inits, batch."""

    def __init__(self, config: StudyConfig, run_indices: np.ndarray,
                 spec: OptimizerSpec, per_run_init: bool):
        self.config = config
        self.run_indices = np.asarray(run_indices, dtype=int)
        obj = get_objective(config.objective)
        self.train_sets = [
            generate_dataset(obj, config.n_samples, config.base_seed + int(i), "train")
            for i in self.run_indices
        ]
        self.test_sets = [
            generate_dataset(obj, config.n_test,
                             config.base_seed + TEST_SEED_OFFSET + int(i), "test")
            for i in self.run_indices
        ]
        if per_run_init:
            init = np.stack([
                kaiming_init(TOY_WIDTHS, np.random.default_rng(
                    config.base_seed + INIT_SEED_OFFSET + int(i))).flat
                for i in self.run_indices
            ])
        else:
            init = kaiming_init(TOY_WIDTHS, np.random.default_rng(
                config.base_seed + INIT_SEED_OFFSET)).flat
        X = np.stack([d.inputs for d in self.train_sets])
        y = np.stack([d.targets for d in self.train_sets])
        self.batch = RunBatch(TOY_WIDTHS, init, X, y, spec, loss=config.loss,
                              dtype=np.dtype(config.dtype))

    def measure(self, study: str, control: str, pos: int, epoch: int,
                target: Optional[float], train_loss: float) -> RunRecord:
        """Full measurement of the run at batch position ``pos``."""
        cfg = self.config
        run = int(self.batch.run_ids[pos])
        params = self.batch.extract(pos)
        test_loss = _dataset_loss(params, self.test_sets[run], cfg.loss)
        report = sharpness_report(
            params, self.train_sets[run], cfg.loss, rho=cfg.rho, k=cfg.k_perturb,
            seed=cfg.base_seed + SHARPNESS_SEED_OFFSET + int(self.run_indices[run]))
        return RunRecord(
            study=study, objective=cfg.objective, control=control,
            run_index=int(self.run_indices[run]), epoch=epoch, target_loss=target,
            train_loss=float(train_loss), test_loss=test_loss,
            generalisation_gap=abs(test_loss - float(train_loss)),
            sharpness=report, seed=cfg.base_seed + int(self.run_indices[run]),
            status=STATUS_OK)

    def plain_record(self, study: str, control: str, run: int, epoch: Optional[int],
                     target: Optional[float], status: str,
                     train_loss: Optional[float] = None,
                     test_loss: Optional[float] = None) -> RunRecord:
        """A value-free or metrics-free row (failed or unreachable cells)."""
        cfg = self.config
        gap = None
        if train_loss is not None and test_loss is not None:
            gap = abs(test_loss - train_loss)
        return RunRecord(
            study=study, objective=cfg.objective, control=control,
            run_index=int(self.run_indices[run]), epoch=epoch, target_loss=target,
            train_loss=train_loss, test_loss=test_loss, generalisation_gap=gap,
            sharpness=None, seed=cfg.base_seed + int(self.run_indices[run]),
            status=status)


def _finite_mask(loss: np.ndarray) -> np.ndarray:
    return np.isfinite(loss)


def run_epoch_logged_study(config: StudyConfig, jobs: int = 1) -> List[RunRecord]:
    """Train every run from one shared init, measuring at each log epoch.

    Log epochs beyond the budget are skipped. Returns one record per
    (run, log epoch), plus failed rows for log epochs a diverged run missed.
    """
    config.validate()
    log_set = sorted(e for e in set(config.log_epochs) if e <= config.epochs_budget)

    def worker(idx: np.ndarray) -> List[RunRecord]:
        runs = _StudyRuns(config, idx, config.optimizer, per_run_init=False)
        batch = runs.batch
        records: List[RunRecord] = []
        remaining = {int(r): list(log_set) for r in range(idx.size)}
        with np.errstate(all="ignore"):
            for epoch in range(config.epochs_budget + 1):
                if batch.n_active == 0:
                    break
                loss = batch.evaluate()
                ok = _finite_mask(loss)
                if not ok.all():
                    for pos in np.nonzero(~ok)[0]:
                        run = int(batch.run_ids[pos])
                        for missed in remaining[run]:
                            if missed >= epoch:
                                records.append(runs.plain_record(
                                    EPOCH_LOGGED, "", run, missed, None,
                                    STATUS_FAILED))
                        remaining[run] = []
                    batch.retire(ok)
                    if batch.n_active == 0:
                        break
                    loss = loss[ok]
                if epoch in log_set:
                    for pos in range(batch.n_active):
                        run = int(batch.run_ids[pos])
                        records.append(runs.measure(
                            EPOCH_LOGGED, "", pos, epoch, None, loss[pos]))
                        remaining[run].remove(epoch)
                if epoch == config.epochs_budget:
                    break
                batch.step()
        records.sort(key=lambda r: (r.run_index, r.epoch))
        return records

    chunks = _chunk_indices(config.n_runs, jobs)
    return _run_chunks(worker, chunks, jobs)


def run_target_loss_study(config: StudyConfig, jobs: int = 1) -> List[RunRecord]:
    """Train every run from one shared init until each target loss is crossed.

    Targets are visited in descending order; a run is measured the first
    epoch its train loss is at or below the next target, and retired once
    the last target is crossed. Targets still standing when the budget runs
    out yield rows with status "unreachable" (final losses recorded, no
    sharpness).
    """
    config.validate()
    targets = list(config.target_losses)

    def worker(idx: np.ndarray) -> List[RunRecord]:
        runs = _StudyRuns(config, idx, config.optimizer, per_run_init=False)
        batch = runs.batch
        records: List[RunRecord] = []
        next_target = {int(r): 0 for r in range(idx.size)}
        with np.errstate(all="ignore"):
            for epoch in range(config.epochs_budget + 1):
                if batch.n_active == 0:
                    break
                loss = batch.evaluate()
                ok = _finite_mask(loss)
                if not ok.all():
                    for pos in np.nonzero(~ok)[0]:
                        run = int(batch.run_ids[pos])
                        for t in targets[next_target[run]:]:
                            records.append(runs.plain_record(
                                TARGET_LOSS, "", run, epoch, t, STATUS_FAILED))
                        next_target[run] = len(targets)
                    batch.retire(ok)
                    if batch.n_active == 0:
                        break
                    loss = loss[ok]
                done = np.zeros(batch.n_active, dtype=bool)
                for pos in range(batch.n_active):
                    run = int(batch.run_ids[pos])
                    while (next_target[run] < len(targets)
                           and loss[pos] <= targets[next_target[run]]):
                        records.append(runs.measure(
                            TARGET_LOSS, "", pos, epoch,
                            targets[next_target[run]], loss[pos]))
                        next_target[run] += 1
                    done[pos] = next_target[run] >= len(targets)
                if done.any():
                    batch.retire(~done)
                    loss = loss[~done]
                if epoch == config.epochs_budget or batch.n_active == 0:
                    break
                batch.step()
            # whatever is still active has unreachable targets at the budget
            for pos in range(batch.n_active):
                run = int(batch.run_ids[pos])
                params = batch.extract(pos)
                train_loss = float(loss[pos])
                test_loss = _dataset_loss(params, runs.test_sets[run], config.loss)
                for t in targets[next_target[run]:]:
                    records.append(runs.plain_record(
                        TARGET_LOSS, "", run, config.epochs_budget, t,
                        STATUS_UNREACHABLE, train_loss, test_loss))
        records.sort(key=lambda r: (r.run_index, -(r.target_loss or 0.0)))
        return records

    chunks = _chunk_indices(config.n_runs, jobs)
    return _run_chunks(worker, chunks, jobs)


def run_matched_controls(config: StudyConfig, jobs: int = 1) -> List[RunRecord]:
    """Train each control arm on identical per-seed inits and datasets.

    A run is measured at convergence (no train-loss improvement greater
    than CONVERGENCE_TOL over the trailing CONVERGENCE_WINDOW epochs) or at
    the budget, whichever comes first.
    """
    config.validate()
    records: List[RunRecord] = []
    for control in config.controls:
        control = _normalize_control(control)
        spec = control_spec(config.optimizer, control)

        def worker(idx: np.ndarray, control=control, spec=spec) -> List[RunRecord]:
            runs = _StudyRuns(config, idx, spec, per_run_init=True)
            batch = runs.batch
            out: List[RunRecord] = []
            best = np.full(batch.n_active, np.inf)
            last_improve = np.zeros(batch.n_active, dtype=int)
            with np.errstate(all="ignore"):
                for epoch in range(config.epochs_budget + 1):
                    if batch.n_active == 0:
                        break
                    loss = batch.evaluate()
                    ok = _finite_mask(loss)
                    if not ok.all():
                        for pos in np.nonzero(~ok)[0]:
                            run = int(batch.run_ids[pos])
                            out.append(runs.plain_record(
                                MATCHED_CONTROLS, control, run, epoch, None,
                                STATUS_FAILED))
                        batch.retire(ok)
                        best, last_improve = best[ok], last_improve[ok]
                        if batch.n_active == 0:
                            break
                        loss = loss[ok]
                    improved = best - loss > CONVERGENCE_TOL
                    best = np.minimum(best, loss)
                    last_improve[improved] = epoch
                    converged = (epoch - last_improve) >= CONVERGENCE_WINDOW
                    at_budget = epoch == config.epochs_budget
                    finish = converged | at_budget
                    for pos in np.nonzero(finish)[0]:
                        out.append(runs.measure(
                            MATCHED_CONTROLS, control, int(pos), epoch, None,
                            loss[pos]))
                    if at_budget:
                        break
                    if finish.any():
                        keep = ~finish
                        batch.retire(keep)
                        best, last_improve = best[keep], last_improve[keep]
                        if batch.n_active == 0:
                            break
                    batch.step()
            out.sort(key=lambda r: r.run_index)
            return out

        chunks = _chunk_indices(config.n_runs, jobs)
        records.extend(_run_chunks(worker, chunks, jobs))
    return records


METRIC_FIELDS = ("train_loss", "test_loss", "generalisation_gap",
                 "sam_sharpness", "fisher_rao_norm", "relative_flatness")


def _group_key(r: RunRecord):
    epoch = r.epoch if r.study == EPOCH_LOGGED else None
    return (r.study, r.objective, r.control, epoch, r.target_loss)


def _sortable_key(key):
    study, objective, control, epoch, target = key
    return (study, objective, control,
            (epoch is None, epoch if epoch is not None else 0),
            (target is None, -(target if target is not None else 0.0)))


def aggregate(records: Sequence[RunRecord]) -> List[AggregateRow]:
    """Mean and SEM per (study cell, metric) over status-ok runs.

    Non-ok records are excluded from the statistics and counted in
    ``n_excluded``. SEM uses the sample standard deviation (ddof=1) and is
    missing, not zero, for single-value cells.
    """
    groups: Dict[tuple, List[RunRecord]] = {}
    for r in sorted(records, key=lambda r: (_sortable_key(_group_key(r)), r.run_index)):
        groups.setdefault(_group_key(r), []).append(r)
    rows: List[AggregateRow] = []
    for key in sorted(groups, key=_sortable_key):
        study, objective, control, epoch, target = key
        recs = groups[key]
        n_excluded = sum(1 for r in recs if r.status != STATUS_OK)
        for metric in METRIC_FIELDS:
            vals = [r.metric(metric) for r in recs if r.status == STATUS_OK]
            vals = [v for v in vals if v is not None]
            n = len(vals)
            mean = float(np.mean(vals)) if n else None
            sem = float(np.std(vals, ddof=1) / math.sqrt(n)) if n >= 2 else None
            rows.append(AggregateRow(study, objective, control, epoch, target,
                                     metric, mean, sem, n, n_excluded))
    return rows


RUNS_CSV_COLUMNS = (
    "study", "objective", "control", "run_index", "epoch", "target_loss",
    "train_loss", "test_loss", "generalisation_gap", "sam_sharpness",
    "fisher_rao_norm", "fr_clamped", "relative_flatness", "rho", "K", "L",
    "seed", "status",
)

AGGREGATE_CSV_COLUMNS = (
    "study", "objective", "control", "epoch", "target_loss", "metric",
    "mean", "sem", "n", "n_excluded",
)


def _cell(value) -> str:
    """Deterministic text form: repr for floats, empty for missing."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _runs_row(r: RunRecord) -> List[str]:
    s = r.sharpness
    return [_cell(v) for v in (
        r.study, r.objective, r.control, r.run_index, r.epoch, r.target_loss,
        r.train_loss, r.test_loss, r.generalisation_gap,
        s.sam_sharpness if s else None,
        s.fisher_rao_norm if s else None,
        s.fr_clamped if s else None,
        s.relative_flatness if s else None,
        s.rho if s else None,
        s.K if s else None,
        s.L if s else None,
        r.seed, r.status,
    )]


def write_runs_csv(records: Sequence[RunRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(RUNS_CSV_COLUMNS)
        for r in records:
            writer.writerow(_runs_row(r))


def write_aggregate_csv(rows: Sequence[AggregateRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(AGGREGATE_CSV_COLUMNS)
        for row in rows:
            writer.writerow([_cell(v) for v in (
                row.study, row.objective, row.control, row.epoch,
                row.target_loss, row.metric, row.mean, row.sem, row.n,
                row.n_excluded)])
