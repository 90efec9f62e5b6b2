"""LiDAR-inertial-visual odometry building blocks on synthetic data."""

__version__ = "0.1.0"
