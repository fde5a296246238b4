"""Free-energy density of one-dimensional k-local quantum chains from local windows."""

__version__ = "0.1.0"
