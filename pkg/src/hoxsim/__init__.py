"""Two-cell cognitive-radio handover exchange simulator and analytic oracles."""

__version__ = "0.1.0"
