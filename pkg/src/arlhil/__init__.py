"""Software twin of an accelerated real-life test bench for flash LiDAR sensors."""

__version__ = "0.1.0"
