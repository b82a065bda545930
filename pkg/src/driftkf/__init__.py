"""Tracking drifting milling-force coefficients with a constrained, repeatedly
inflated ensemble Kalman filter, benchmarked against RLS."""

__version__ = "0.1.0"
