"""Traffic simulation and longitudinal driving-policy learning."""

__version__ = "0.1.0"
