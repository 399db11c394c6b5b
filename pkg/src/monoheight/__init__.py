"""Single-image human height estimation: label mining, preprocessing, regressors and evaluation."""

__version__ = "0.1.0"
