"""Integration tests for rampwatch.

Monte Carlo acceptance runs over the shipped configs; select with -m integration.
"""
