"""BCS Trotter simulation and randomized-compiling error-mitigation workbench."""

__version__ = "0.1.0"
