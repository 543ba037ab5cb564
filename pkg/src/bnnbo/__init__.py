"""Constrained BNN-based Bayesian optimization."""
