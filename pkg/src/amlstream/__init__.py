"""Embedded AML transaction-monitoring pipeline.

A self-contained reduction of a lambda-style fraud platform to a single
process: a deterministic transaction generator, a partitioned append-only
event log (speed-layer input), a micro-batch stream processor with rule
and model alerting, a batch feature/training path, a model registry with
drift-gated retraining, and file-backed blob/table storage.
"""

__version__ = "0.1.0"
