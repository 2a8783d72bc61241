"""Curvature tables, sharpness studies, and landscape tooling for 2-D benchmark objectives."""

__version__ = "0.1.0"

from .objectives import OBJECTIVES, ObjectiveFunction, get_objective, list_objectives
from .geometry import (HessianStats, MinimumRow, check_against_reference,
                       eigen_2x2, hessian_stats, minima_table, write_table_csv)
from .mlp import (TOY_WIDTHS, MLPParams, kaiming_init, load_checkpoint,
                  loss_and_gradient, parameter_count, save_checkpoint)
from .optim import OptimizerSpec, SamOptimizer, make_optimizer
from .training import RunBatch
from .data import (PredictionRecord, RegressionDataset, generate_dataset,
                   ingest_predictions, load_dataset, save_dataset)
from .sharpness import (SharpnessReport, fisher_rao_norm, relative_flatness,
                        sam_sharpness, sharpness_report)
from .safety import (EvaluationReport, accuracy, corruption_accuracy,
                     evaluation_report, expected_calibration_error,
                     prediction_disagreement)
from .experiments import (AggregateRow, RunRecord, StudyConfig, aggregate,
                          run_epoch_logged_study, run_matched_controls,
                          run_target_loss_study, write_aggregate_csv,
                          write_runs_csv)
from .landscape import (LandscapeGrid, export_grid, grid_over, import_grid,
                        loss_grid, network_landscape, random_directions)
from .estimator import MLPRegressor2D
from .validation import NumericError

__all__ = [
    "__version__",
    "OBJECTIVES",
    "ObjectiveFunction",
    "get_objective",
    "list_objectives",
    "HessianStats",
    "MinimumRow",
    "check_against_reference",
    "eigen_2x2",
    "hessian_stats",
    "minima_table",
    "write_table_csv",
    "TOY_WIDTHS",
    "MLPParams",
    "kaiming_init",
    "load_checkpoint",
    "loss_and_gradient",
    "parameter_count",
    "save_checkpoint",
    "OptimizerSpec",
    "SamOptimizer",
    "make_optimizer",
    "RunBatch",
    "PredictionRecord",
    "RegressionDataset",
    "generate_dataset",
    "ingest_predictions",
    "load_dataset",
    "save_dataset",
    "SharpnessReport",
    "fisher_rao_norm",
    "relative_flatness",
    "sam_sharpness",
    "sharpness_report",
    "EvaluationReport",
    "accuracy",
    "corruption_accuracy",
    "evaluation_report",
    "expected_calibration_error",
    "prediction_disagreement",
    "AggregateRow",
    "RunRecord",
    "StudyConfig",
    "aggregate",
    "run_epoch_logged_study",
    "run_matched_controls",
    "run_target_loss_study",
    "write_aggregate_csv",
    "write_runs_csv",
    "LandscapeGrid",
    "export_grid",
    "grid_over",
    "import_grid",
    "loss_grid",
    "network_landscape",
    "random_directions",
    "MLPRegressor2D",
    "NumericError",
]
