"""Sub-Riemannian geometry toolkit on polynomial frames."""

__version__ = "0.1.0"
