"""mselab: minimal surface equation experiments on unbounded convex domains."""

__version__ = "0.1.0"
