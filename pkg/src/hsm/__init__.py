"""Hierarchical sparse modeling with group lasso and latent overlapping
group lasso penalties over DAG-structured groups."""

__version__ = "0.1.0"
