"""Phase discovery from converged variational circuit parameters."""

__version__ = "0.1.0"
