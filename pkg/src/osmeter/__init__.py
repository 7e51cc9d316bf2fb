"""Osmeter: measure code and data availability in research article corpora."""

__version__ = "0.1.0"
