"""Deep Gaussian processes for learning maps between function spaces."""

__version__ = "0.1.0"
