"""Simulator and offline analysis toolkit for PEBS-style memory-access sampling."""

__version__ = "0.1.0"
