"""Transport-operator tools for optimal control of ODE ensembles."""

from .catalog import CATALOG, get_problem
from .problem import ConfigError, ControlSet, ControlSignal, Problem, RelaxedControl, load_problem

__all__ = [
    "CATALOG",
    "ConfigError",
    "ControlSet",
    "ControlSignal",
    "Problem",
    "RelaxedControl",
    "get_problem",
    "load_problem",
]

__version__ = "0.1.0"
