"""Simulation and analysis toolkit for heralded single photons from warm atomic vapour."""

__version__ = "0.1.0"
