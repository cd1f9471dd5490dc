"""Liver focal-lesion detection on synthetic multi-phase CT phantoms."""

__version__ = "0.1.0"
