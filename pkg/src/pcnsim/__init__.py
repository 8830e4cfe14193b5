"""Deterministic simulator and analysis toolkit for committee-backed payment channels."""

__version__ = "0.1.0"
