"""Patch-level knowledge distillation for pulse-signal models on synthetic PPG."""

__version__ = "0.1.0"
