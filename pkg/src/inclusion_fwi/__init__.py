"""Bayesian shape and material inversion of a buried inclusion from surface wave data."""
