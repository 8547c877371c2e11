"""Feed-forward multi-view Gaussian splatting reconstruction with pixel-wise triplet fusion."""

__version__ = "0.1.0"
