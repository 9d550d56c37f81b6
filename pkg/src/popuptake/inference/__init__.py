"""Gradient-based MCMC engine and convergence diagnostics."""
