"""Matern covariance toolkit."""
