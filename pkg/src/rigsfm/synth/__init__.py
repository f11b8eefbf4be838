"""Synthetic drive-through scenes and mask sequences with ground truth."""
