"""Spectral CGO solvers and stability experiments for a perturbed biharmonic inverse problem."""

__version__ = "0.1.0"
