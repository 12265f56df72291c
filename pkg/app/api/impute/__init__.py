"""Imputation and synthetic-data API package."""
