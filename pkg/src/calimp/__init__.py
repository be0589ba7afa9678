"""Calibrated multiple imputation for incomplete categorical covariates.

The package covers the full workflow: categorical datasets with missing
cells (:mod:`calimp.tabular`), logistic/multinomial fitting
(:mod:`calimp.glm`), logistic observation models that create missingness
(:mod:`calimp.selection`), calibration offsets against a reference
distribution (:mod:`calimp.calibration`), the imputation methods
themselves (:mod:`calimp.impute`), Rubin's-rules pooling
(:mod:`calimp.pooling`), closed-form bias on the 2x2 case
(:mod:`calimp.analytic`) and a Monte Carlo lab (:mod:`calimp.simlab`).
"""

from .calibration import (OffsetSolution, required_missing_dist,
                          solve_offset_binary, solve_offset_categorical)
from .errors import (CalimpError, ConfigError, DataError, FeasibilityError,
                     FitError, NumericError, SchemaError, SeparationError,
                     SimulationError, SolverError)
from .glm import DesignSpec, GlmFit, draw_params, fit, predict_prob
from .impute import (ImputationResult, PopulationDistribution,
                     analyze_pooled, complete_records, impute_calibrated,
                     impute_standard, impute_weighted, single_impute,
                     write_stacked_csv)
from .pooling import PooledEstimate, fmi_jackknife_mcse, pool, pool_fits
from .selection import SelectionModel, ampute, observe_prob, solve_alpha0
from .tabular import MISSING, Dataset, Variable, read_csv, write_csv

__version__ = "0.1.0"

__all__ = [
    "CalimpError", "ConfigError", "DataError", "Dataset", "DesignSpec",
    "FeasibilityError", "FitError", "GlmFit", "ImputationResult", "MISSING",
    "NumericError", "OffsetSolution", "PooledEstimate",
    "PopulationDistribution", "SchemaError", "SelectionModel",
    "SeparationError", "SimulationError", "SolverError", "Variable",
    "ampute", "analyze_pooled", "complete_records", "draw_params", "fit",
    "fmi_jackknife_mcse", "impute_calibrated", "impute_standard",
    "impute_weighted", "observe_prob", "pool", "pool_fits", "predict_prob",
    "read_csv", "required_missing_dist", "single_impute",
    "solve_alpha0", "solve_offset_binary", "solve_offset_categorical",
    "write_csv", "write_stacked_csv",
]
