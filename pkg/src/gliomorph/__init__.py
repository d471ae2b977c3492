"""Hd95 deformation features and random-survival-forest survival modelling."""

__version__ = "0.1.0"
