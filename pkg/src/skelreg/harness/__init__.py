"""Benchmark harness: configuration, dataset generation, experiment runners."""
