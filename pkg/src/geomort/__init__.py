"""Spatial imputation, anomaly labeling and covariate importance for county rate panels."""

__version__ = "0.1.0"
