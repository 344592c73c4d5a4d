"""Contextual dynamic pricing with binary feedback: the ORBIT pricer, its pilots and a simulation harness."""
__version__ = "0.1.0"

from .env import (BernoulliFeedback, Instance, TailModel, build_oracle_table, make_experiment_instance,
                  make_experiment_tail, make_truncated_linear_tail, maximize_revenue, oracle_price, revenue)
from .errors import (AmbiguityWarning, AmplitudeError, BudgetError, ConfigurationError, ConstructionError,
                     ContractViolation, ConvergenceError, GeneratorFailure, InvalidTailError, NoDataError,
                     NumericalError, OrbitError, ProtocolError, RepetitionError)
from .orbit import Orbit, OrbitConfig
from .pilot_adaptive import RidgeState, run_adaptive_pilot
from .harness import ExperimentConfig, fit_loglog_slope, regret_account, run

__all__ = [
    "AmbiguityWarning", "AmplitudeError", "BernoulliFeedback", "BudgetError", "ConfigurationError",
    "ConstructionError", "ContractViolation", "ConvergenceError", "ExperimentConfig", "GeneratorFailure",
    "Instance", "InvalidTailError", "NoDataError", "NumericalError", "Orbit", "OrbitConfig", "OrbitError",
    "ProtocolError", "RepetitionError", "RidgeState", "TailModel", "build_oracle_table", "fit_loglog_slope",
    "make_experiment_instance", "make_experiment_tail", "make_truncated_linear_tail", "maximize_revenue",
    "oracle_price", "regret_account", "revenue", "run", "run_adaptive_pilot",
]
