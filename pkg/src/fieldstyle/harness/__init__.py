"""Synthetic data, metrics, benchmarks and the command line."""
