"""Invertible-flow codec with a learned auxiliary predictor, a slot memory bank, and a PCA baseline."""

__version__ = "0.1.0"
