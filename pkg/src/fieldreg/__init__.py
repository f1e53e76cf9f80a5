"""Camera focal length and pose recovery for planar sports fields."""

__version__ = "0.1.0"
