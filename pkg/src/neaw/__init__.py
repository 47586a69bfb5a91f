"""Neuron-activity-aware Hebbian learning for point-cloud encoding."""

__version__ = "0.1.0"
