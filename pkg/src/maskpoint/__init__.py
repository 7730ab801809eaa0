"""Masked point discrimination pretraining for point clouds."""
