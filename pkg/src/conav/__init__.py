"""Shared-autonomy navigation stack: safety-critical NMPC blended with a
human operator modeled as Boltzmann-rational, with the intent parameters
adapted online."""

__version__ = "0.1.0"
