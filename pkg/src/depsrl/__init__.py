"""Hierarchical multitask dependency parsing and semantic role labeling."""

__version__ = "0.1.0"
