"""Deterministic federated-averaging simulator for tabular ICU survival
prediction: synthetic non-IID multi-hospital data, a from-scratch MLP,
a fault-tolerant parallel round executor, and a hyper-parameter sweep
harness."""

__version__ = "0.1.0"
