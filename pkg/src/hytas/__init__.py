"""Training-free transformer architecture search for hyperspectral token classifiers."""

__version__ = "0.1.0"
