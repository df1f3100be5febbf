"""Explanation-necessity tooling for driving video: corpus building, annotator
aggregation, scenario clustering, study statistics, and a real-time necessity
classifier with its training pipeline."""

__version__ = "0.1.0"
