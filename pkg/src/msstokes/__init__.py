"""Hybridized-DG generalized multiscale finite elements for perforated Stokes flow."""

__version__ = "0.1.0"
