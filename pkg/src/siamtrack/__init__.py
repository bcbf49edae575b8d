"""Siamese point-cloud Transformer tracking for LiDAR single object tracking."""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
