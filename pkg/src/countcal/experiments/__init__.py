"""Reproducible experiment runners and synthetic problems."""
