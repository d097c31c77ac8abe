"""Exception types shared across the package."""


class RiskscenError(Exception):
    """Base class for all package errors."""


class ConfigError(RiskscenError):
    """Bad user input: malformed files, inconsistent parameters, infeasible setups."""


class SolverError(RiskscenError):
    """Numerical solver failure: ray termination, iteration limits, infeasible models."""
