"""Numerical library and harness services."""
