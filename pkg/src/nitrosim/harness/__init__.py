"""Experiment runner, statistics and command line."""
