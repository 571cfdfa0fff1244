"""Dual-stream time-series / connectivity learning for fMRI drug-response prediction."""

__version__ = "0.1.0"
