"""Coupled skin thermoregulation simulator on a deforming cylinder."""
from .params import InvalidParameters, ModelParams, check_params, validate
from .io import ConfigError, RunConfig, parse_config
from .driver import Problem, global_picard, run, run_staggered

__version__ = "0.1.0"

__all__ = ["InvalidParameters", "ModelParams", "check_params", "validate", "ConfigError", "RunConfig",
           "parse_config", "Problem", "global_picard", "run", "run_staggered", "__version__"]
