"""Subjectivity-aware label-uncertainty modelling with Student's-t label distributions."""

__version__ = "0.1.0"
