"""flowcast: synthetic PMU datasets from AC power flow and
flow/injection estimators for sparsely metered transmission grids."""

__version__ = "0.1.0"
