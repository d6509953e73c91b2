"""Benchmark harness and retrieval-augmented repair for Solidity completion."""

__version__ = "0.1.0"
