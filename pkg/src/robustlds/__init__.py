"""Online control of misspecified linear dynamical systems."""

__version__ = "0.1.0"
